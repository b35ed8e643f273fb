//! Deterministic reverse-mode automatic differentiation over small dense
//! tensors, with an Adam optimizer, finite-difference checking and a binary
//! checkpoint format.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
pub mod opcheck;
pub mod optim;
mod params;
pub mod rng;
mod tensor;

pub use error::{IoError, Result, TensorError};
pub use gradcheck::{finite_diff_check, finite_diff_report, FdReport};
pub use graph::{Gradients, Graph, GraphConfig, Precision, Var};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;
