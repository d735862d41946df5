use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A rate term was evaluated outside the region where `ln(1 + SINR)` is defined.
    #[error("rate domain error for user {user}: {detail}")]
    Domain { user: usize, detail: String },

    #[error("parse error in {path}: {record}: {detail}")]
    Parse {
        path: PathBuf,
        record: String,
        detail: String,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("grid too large: {points} points exceeds the limit of {limit}")]
    GridTooLarge { points: u128, limit: u128 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        record: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            record: record.into(),
            detail: detail.into(),
        }
    }
}
