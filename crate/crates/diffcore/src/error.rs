use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Config { op: &'static str, msg: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> DiffError {
    DiffError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn config_err(op: &'static str, msg: impl Into<String>) -> DiffError {
    DiffError::Config {
        op,
        msg: msg.into(),
    }
}
