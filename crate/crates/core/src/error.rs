use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the registration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: {0}")]
    Contract(String),

    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no overlap between model and scan: {0}")]
    NoOverlap(String),

    #[error("solver stalled: {0}")]
    SolverStall(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("invalid synthesis spec: {0}")]
    Spec(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
