use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid refiners: {0}")]
    InvalidRefiners(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical overflow: {0}")]
    Overflow(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("sampler does not support {0}")]
    Unsupported(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("wall-clock budget exceeded")]
    BudgetExceeded,
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
