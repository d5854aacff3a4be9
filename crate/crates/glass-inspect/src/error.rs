//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation was called with a value outside its preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration file or CLI flag failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Two components disagree about a contract (e.g. embedding dimension
    /// vs. model dimension). Detected before any partial output is written.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A model or data file exists but cannot be decoded.
    #[error("load error: {0}")]
    Load(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 I/O, 4 contract violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Io { .. } | Error::Load(_) => 3,
            Error::ContractViolation(_) => 4,
        }
    }
}
