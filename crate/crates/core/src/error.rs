use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate abstract id {id:?} at line {line} (first seen at line {first})")]
    DuplicateId {
        id: String,
        line: usize,
        first: usize,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("too few instances to split ({0} < 10)")]
    TooFewInstances(usize),

    #[error("non-finite loss for instance {key}")]
    NonFiniteLoss { key: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("position {position} out of range for sentence of length {len}")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("token at position {position} is {found:?}, expected {expected:?}")]
    AbbreviationMismatch {
        position: usize,
        expected: String,
        found: String,
    },

    #[error("missing contextual record for key {0}")]
    MissingContextual(String),

    #[error("provider mismatch: {0}")]
    ProviderMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
