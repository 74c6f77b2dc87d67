use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Conllu { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt container at byte offset {offset}: {message}")]
    Corrupt { offset: u64, message: String },

    #[error("non-finite value in sentence '{sentence_id}'")]
    NonFinite { sentence_id: String },

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    Dimension {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("size mismatch: {0}")]
    Size(String),

    #[error("alignment failure at sentence index {index}: {message}")]
    Alignment { index: usize, message: String },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid configuration for '{key}': {message}")]
    Config { key: String, message: String },

    #[error("{0}")]
    Data(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("all {} search trials aborted: {}", .0.len(), .0.join("; "))]
    SearchFailed(Vec<String>),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn dimension(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            actual,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } => ErrorKind::Config,
            Error::NonFiniteLoss { .. } | Error::SearchFailed(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
