use std::path::PathBuf;

use diffcore::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HsdaError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("cannot impute subject {subject} task {task} channel {channel}: fewer than 2 valid values")]
    Imputation {
        subject: String,
        task: u8,
        channel: &'static str,
    },
    #[error("sequence too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("timestamps not strictly increasing at sample {index}")]
    Ordering { index: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite {what}")]
    NonFinite { what: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T> = std::result::Result<T, HsdaError>;

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HsdaError {
    let path = path.into();
    move |source| HsdaError::Io { path, source }
}
