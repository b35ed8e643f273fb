//! Alignment, duration extraction, corpus handling, evaluation and the
//! feed-forward singing model.

pub mod aligner;
pub mod corpus;
pub mod duration;
pub mod evalkit;
mod error;
pub mod pipeline;
pub mod singer;

pub use error::{CoreError, Result};
