use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {dims:?}: every dimension must be at least 1")]
    InvalidShape { dims: Vec<usize> },

    #[error("buffer of length {len} does not match shape {dims:?} ({expected} elements)")]
    LengthMismatch {
        dims: Vec<usize>,
        len: usize,
        expected: usize,
    },

    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward requires a scalar loss, got shape {dims:?}")]
    NonScalarLoss { dims: Vec<usize> },

    #[error("loss does not depend on any tensor that requires a gradient")]
    DetachedLoss,

    #[error("{op}: operands belong to different tapes")]
    ForeignTape { op: &'static str },
}

impl TensorError {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        TensorError::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}
