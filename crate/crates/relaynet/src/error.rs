use thiserror::Error;

/// Errors produced by construction and by the numerical operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("structural mismatch: {0}")]
    Mismatch(String),

    #[error("model assumption violated: {0}")]
    Assumption(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("consistency check failed: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }
    pub fn assumption(msg: impl Into<String>) -> Self {
        Error::Assumption(msg.into())
    }
}
