use thiserror::Error;

/// Errors raised by the geometry, certification, and solver layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate segment {index}: {reason}")]
    DegenerateSegment { index: usize, reason: String },

    #[error("invalid boundary: {0}")]
    InvalidBoundary(String),

    #[error("infeasible box: lower bound exceeds upper bound in coordinate {index}")]
    InfeasibleBox { index: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("initial set fails verification: {0}")]
    InitUnverifiable(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("data format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Format(e.to_string()),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
