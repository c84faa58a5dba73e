use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("genome length mismatch: layout needs {expected} parameters, got {actual}")]
    GenomeLength { expected: usize, actual: usize },

    #[error("genome contains a non-finite parameter at index {0}")]
    NonFiniteGenome(usize),

    #[error("invalid grid dimensions {height}x{width}: {reason}")]
    GridDims {
        height: usize,
        width: usize,
        reason: &'static str,
    },

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }
}

pub(crate) trait IoContext<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| Error::Io {
            context: what(),
            source,
        })
    }
}
