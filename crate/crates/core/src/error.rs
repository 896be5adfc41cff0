use thiserror::Error;

/// Errors produced anywhere in the sampling library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid weight {0}: weights must be finite and >= 1")]
    InvalidWeight(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("{0}")]
    OutOfRange(String),

    #[error("expected count {expected:.3} in category {category} is below 5; pool categories first")]
    PoolingRequired { category: usize, expected: f64 },

    #[error("query before any item was observed")]
    Empty,

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
