use thiserror::Error;

use crate::tensor::Label;

#[derive(Debug, Error)]
pub enum CtsError {
    #[error("dimension mismatch on paired legs {left:?}/{right:?}: {left_dim} vs {right_dim}")]
    DimensionMismatch {
        left: Label,
        right: Label,
        left_dim: usize,
        right_dim: usize,
    },

    #[error("duplicate leg label {0:?}")]
    DuplicateLabel(Label),

    #[error("unknown leg label {0:?}")]
    UnknownLabel(Label),

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("tensor contains a non-finite entry")]
    NonFinite,

    #[error("requested order is not a permutation of the tensor's legs")]
    NotAPermutation,

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{what} of size {size} exceeds the configured cap {cap}")]
    CapExceeded { what: String, size: u128, cap: u128 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm {0}")]
    ZeroNorm(String),

    #[error("post-selection impossible: the selected branch has zero norm")]
    PostselectionImpossible,

    #[error("fidelity {achieved} below required {required}")]
    FidelityTooLow { achieved: f64, required: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CtsError {
    pub fn shape(msg: impl Into<String>) -> Self {
        CtsError::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CtsError::InvalidArgument(msg.into())
    }

    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            CtsError::Numeric(_)
                | CtsError::NonFinite
                | CtsError::ZeroNorm(_)
                | CtsError::PostselectionImpossible
                | CtsError::FidelityTooLow { .. }
                | CtsError::CapExceeded { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, CtsError>;
