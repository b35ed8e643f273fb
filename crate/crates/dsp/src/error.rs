use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DspError>;

pub(crate) fn contract(msg: impl Into<String>) -> DspError {
    DspError::Contract(msg.into())
}
