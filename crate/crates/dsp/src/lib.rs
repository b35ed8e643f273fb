//! Audio signal processing: STFT analysis and overlap-add synthesis, mel
//! filterbanks, Griffin-Lim phase reconstruction, pitch tracking and note
//! conversion, BS.1770 loudness normalisation and silence compression.

pub mod audio;
pub mod cache;
mod error;
pub mod griffin_lim;
pub mod loudness;
pub mod mel;
pub mod pitch;
pub mod silence;
pub mod stft;

pub use audio::{read_wav, resample, write_wav, Waveform, DEFAULT_SAMPLE_RATE};
pub use error::{DspError, Result};
pub use griffin_lim::{griffin_lim, GriffinLimOutput};
pub use loudness::{integrated_loudness, normalize_loudness, LoudnessReport, LoudnessStatus};
pub use mel::{mel, mel_filterbank};
pub use pitch::{cents_off, extract_f0, f0_to_note, median_filter, note_to_f0, Note, PitchConfig, PitchSequence};
pub use silence::{compress_silence, FrameMap};
pub use stft::{istft, linear_spectrogram, stft, ComplexFrames, SpecKind, Spectrogram, StftEngine, FRAME_SIZE, HOP_SIZE};
