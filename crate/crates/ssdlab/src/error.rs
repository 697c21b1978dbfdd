use std::path::PathBuf;

use thiserror::Error;

use crate::inner::ValidationError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("policy validation failed: {0}")]
    Validation(#[from] ValidationError),

    #[error("synthesizer failed: {0}")]
    Synthesizer(String),

    #[error("inner loop failed: no iteration produced a valid policy ({0})")]
    InnerLoopFailed(String),

    #[error("proposer failed: {0}")]
    Proposer(String),

    #[error("external command failed: {0}")]
    Command(String),

    #[error("parse error in {source_name} at line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
