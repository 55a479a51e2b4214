//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid grids, partitions, or mismatched inputs.
    #[error("configuration error: {0}")]
    Config(String),
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A grid or noise path does not cover the required range.
    #[error("coverage error: {0}")]
    Coverage(String),
    /// Index outside the valid range.
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    /// Failure inside one Monte Carlo replicate.
    #[error("replicate {index}: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    /// Non-finite numeric output.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Result alias.
pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn coverage(msg: impl Into<String>) -> Error {
    Error::Coverage(msg.into())
}
