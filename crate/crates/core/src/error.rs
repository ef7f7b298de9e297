use std::path::{Path, PathBuf};

use qrqa_neural::NeuralError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A structured record is missing a field or violates its schema.
    #[error("{file}: record {record}: {message}")]
    Schema {
        file: String,
        record: String,
        message: String,
    },

    /// A line-oriented file failed to parse.
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("missing {}: run `{producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Neural(#[from] NeuralError),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn parse(file: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.as_ref().display().to_string(),
            line,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    /// True for failures caused by bad input data or missing artifacts, as
    /// opposed to broken internal invariants.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Invariant(_) => false,
            Error::Neural(e) => !matches!(e, NeuralError::Shape { .. } | NeuralError::NoForward),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
