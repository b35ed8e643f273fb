use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by node {node} ({op})")]
    NumericOverflow { node: usize, op: &'static str },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is neither `Clone` nor `PartialEq`; keep the message only.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for TensorError {
    fn from(e: std::io::Error) -> Self {
        TensorError::Io(IoError(e.to_string()))
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn contract(msg: impl Into<String>) -> TensorError {
    TensorError::Contract(msg.into())
}
