use std::path::PathBuf;

use crate::scorer::ScoreError;
use crate::scorer::TemplateError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

/// Problems reading or writing on-disk data.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}:{line}: missing required field \"{field}\"", path.display())]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("{}:{line}: duplicate id \"{id}\"", path.display())]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("duplicate passage id \"{0}\"")]
    DuplicatePassage(String),
    #[error("{}:{line}: {message}", path.display())]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: not a valid index file: {message}", path.display())]
    BadIndex { path: PathBuf, message: String },
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
