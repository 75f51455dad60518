use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("vocab: {0}")]
    Vocab(String),

    #[error("duplicate token {token:?} at line {line}")]
    DuplicateToken { token: String, line: usize },

    #[error("missing reserved token {0:?}")]
    MissingReserved(&'static str),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error(transparent)]
    Tag(#[from] TagError),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("invalid corpus: {0}")]
    Corpus(String),

    #[error("language model: {0}")]
    Lm(String),

    #[error("scorer: {0}")]
    Scorer(String),

    #[error("unknown observation {0:?}")]
    UnknownObservation(String),

    #[error("decode: {0}")]
    Decode(String),

    #[error("names: {0}")]
    Names(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("config: {0}")]
    Config(String),

    #[error("internal: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// True for failures caused by bad input data rather than a bug.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }
}

/// Violations of the flat `<ne> … </ne>` tag grammar.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("nested <ne> at position {0}")]
    Nested(usize),
    #[error("</ne> without opening <ne> at position {0}")]
    UnmatchedClose(usize),
    #[error("<ne> at position {0} is never closed")]
    Unclosed(usize),
}
