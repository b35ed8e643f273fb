//! Feed-forward singing model: lyrics, pitch and reference encoders summed
//! per frame and decoded to linear spectrograms.

mod config;
mod model;
mod train;

pub use config::SingerConfig;
pub use model::{length_regulate, regulate_indices, renormalize_durations, FftBlock, SingerInput, SingerModel};
pub use train::{scaled_frames, singer_optimizer, synthesize, train_singer, SingerStepLog, SingerTrainer, SingingExample, Synthesis};
