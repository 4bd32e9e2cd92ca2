//! Error types shared across the toolkit.

use thiserror::Error;

/// Unified error type. The three variants map onto the CLI exit codes:
/// usage errors exit 1, data errors exit 2, numeric failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (files, graphs, tensors).
    #[error("data error: {0}")]
    Data(String),
    /// Invalid API usage or invalid configuration/arguments.
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values or diverging computations.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
