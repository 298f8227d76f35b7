use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("utterance {id}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_utterance(self, id: &str) -> Self {
        match self {
            e @ Error::Utterance { .. } => e,
            e => Error::Utterance {
                id: id.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// The error with any utterance context peeled off.
    /// A failure to read or write a file, as opposed to bad content.
    pub fn is_io(&self) -> bool {
        matches!(
            self.root(),
            Error::Io { .. }
                | Error::Wav {
                    source: hound::Error::IoError(_),
                    ..
                }
        )
    }

    pub fn root(&self) -> &Error {
        match self {
            Error::Utterance { source, .. } => source.root(),
            e => e,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
pub(crate) use shape_err;

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidInput(format!($($arg)*)) };
}
pub(crate) use invalid;
