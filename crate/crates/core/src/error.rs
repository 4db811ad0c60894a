use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the clustering engine and its I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    /// A data structure violated one of its invariants.
    #[error("structural error: {0}")]
    Structure(String),

    /// Caller supplied an invalid configuration or argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input file did not match the expected format.
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// A numeric routine was called outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A split/merge proposal cannot be built for the requested target.
    #[error("proposal impossible: {0}")]
    ProposalImpossible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("runtime error: {0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
