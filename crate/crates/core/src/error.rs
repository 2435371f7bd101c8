//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a contract (bad CSV cell, unknown arm, shape mismatch, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A configuration value is out of range or references something that does not exist.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An estimator hit a degenerate state (empty cell, zero variance, missing arm, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
}
