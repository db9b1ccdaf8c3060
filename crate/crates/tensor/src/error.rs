use thiserror::Error;

/// Errors raised by tensor construction, graph recording and backward.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: dimension mismatch on {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: String,
        detail: String,
    },

    #[error("{op}: invalid parameter: {detail}")]
    Parameter { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward contract violated: {0}")]
    Contract(String),

    #[error("variable belongs to a different or already-consumed tape")]
    StaleVar,
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, axis: impl Into<String>, detail: impl Into<String>) -> Self {
        TensorError::Dimension {
            op,
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn param(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Parameter {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
