use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no data: {0}")]
    EmptyData(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate entry `{0}`")]
    Duplicate(String),

    #[error("missing entry `{0}`")]
    Missing(String),

    #[error("unknown entry `{0}`")]
    Unknown(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("malformed model container: {0}")]
    Container(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("correlation undefined for constant input")]
    UndefinedCorrelation,
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
