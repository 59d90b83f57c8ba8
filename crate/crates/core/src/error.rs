use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} is not supported (maximum {max})")]
    UnsupportedDimension { dim: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("matrix of size {size} is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { size: usize, jitter: f64 },

    #[error("degenerate update: conditional variance {variance:e} at the new point")]
    DegenerateUpdate { variance: f64 },

    #[error("covariance is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors coming from the numerical core rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::DegenerateUpdate { .. }
                | Error::NotPsd(_)
                | Error::Domain(_)
        )
    }
}
