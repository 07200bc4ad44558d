use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("eigensolver did not converge (best residual {residual:e})")]
    ConvergenceFailure { residual: f64 },

    #[error("degenerate basis: vector {index} is linearly dependent on its predecessors")]
    DegenerateBasis { index: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
