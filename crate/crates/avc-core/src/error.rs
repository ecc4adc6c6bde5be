use thiserror::Error;

/// Errors shared across the crate.
#[derive(Error, Debug, Clone)]
pub enum AvcError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),

    #[error("distribution not normalized: mass sums to {sum} (tolerance {tol})")]
    NotNormalized { sum: f64, tol: f64 },

    #[error("negative probability mass {value} at index {index}")]
    NegativeMass { index: usize, value: f64 },

    #[error("problem size exceeds capacity limit: {0}")]
    CapacityLimit(String),

    #[error("marginal is not reachable through the observation channel: {0}")]
    InfeasibleMarginal(String),

    #[error("observation type is not compatible with any state distribution: {0}")]
    InfeasibleType(String),
}

impl AvcError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        AvcError::InvalidArgument(msg.into())
    }
}
