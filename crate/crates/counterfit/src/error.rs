//! Error type shared by every module in the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A text input could not be parsed; carries the offending line number.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// An underlying I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An argument or input violated a precondition.
    #[error("{0}")]
    Validation(String),

    /// A word was looked up that is not in the vocabulary.
    #[error("word not in vocabulary: {0:?}")]
    UnknownWord(String),

    /// Loading or filtering produced no usable vocabulary.
    #[error("empty vocabulary")]
    EmptyVocabulary,

    /// Cosine geometry is undefined for a zero-norm row.
    #[error("zero-norm vector for word id {0}: cosine undefined")]
    ZeroNorm(usize),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            message: message.into(),
        }
    }

    /// Process exit status for the CLI: 2 for I/O failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
