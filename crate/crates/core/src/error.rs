use portrait_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input error: {0}")]
    Input(String),
    #[error("state error: {0}")]
    State(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("dimension error at layer {layer}: {detail}")]
    Dimension { layer: String, detail: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("frozen parameter changed: {0}")]
    FrozenMutation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("png: {0}")]
    Png(#[from] png::EncodingError),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn input(msg: impl Into<String>) -> CoreError {
    CoreError::Input(msg.into())
}

pub(crate) fn state(msg: impl Into<String>) -> CoreError {
    CoreError::State(msg.into())
}

pub(crate) fn format_err(msg: impl Into<String>) -> CoreError {
    CoreError::Format(msg.into())
}
