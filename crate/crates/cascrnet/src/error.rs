//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's contract (shape mismatch, bad label, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration describes something the kit cannot build or run.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// A binary or text format failed to parse; `offset` is the byte offset
    /// of the offending field.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Dataset-level problem: missing files, bad manifest rows, ...
    #[error("data error: {0}")]
    Data(String),

    /// Run configuration problem (unknown key, unparsable value, missing file).
    #[error("config error: {0}")]
    Config(String),

    /// A NaN or infinity showed up where finiteness is promised.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn invalid_spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }

    pub fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn non_finite(msg: impl Into<String>) -> Self {
        Error::NonFinite(msg.into())
    }
}
