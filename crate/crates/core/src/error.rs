use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is missing or out of its allowed range.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("normalization range is degenerate (lo = hi = {0})")]
    DegenerateRange(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("search space has {cardinality} actions, exceeding the enumeration budget of {budget}")]
    BudgetExceeded { cardinality: u128, budget: u128 },

    #[error("policy update requires at least one episode")]
    EmptyBatch,

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
