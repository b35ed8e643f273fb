use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] cantor_tensor::TensorError),
    #[error(transparent)]
    Dsp(#[from] cantor_dsp::DspError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn contract(msg: impl Into<String>) -> CoreError {
    CoreError::Contract(msg.into())
}
