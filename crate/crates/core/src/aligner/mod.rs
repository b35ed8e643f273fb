//! Lyrics-to-singing alignment model trained chunk by chunk with a length
//! curriculum and a guided attention band.

mod config;
mod mask;
mod model;
mod train;

pub use config::{default_bandwidth, AlignerConfig, CurriculumState};
pub use mask::{band_mask, build_guided_mask, guided_loss, GuidedMask};
pub use model::{aligner_chunk_step, build_chunk_graph, AlignerModel, ChunkGraph, ChunkInput, ChunkOutcome, DecoderCarry};
pub use train::{
    align_example, aligner_optimizer, fine_tune_sentence_level, linear_positions, sentence_examples, song_features, train_aligner,
    AlignExample, AlignerTrainer, ChunkLog, EpochReport, SongAlignment,
};
