use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input failed a structural check (normalization, Hermiticity, arity, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A collapse or conditioning was requested on an outcome of (numerically) zero probability.
    #[error("impossible branch: outcome probability {probability:e} is below threshold")]
    ImpossibleBranch { probability: f64 },

    /// An internal invariant did not hold.
    #[error("consistency failure: {0}")]
    Consistency(String),

    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn consistency(msg: impl Into<String>) -> Self {
        Error::Consistency(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
