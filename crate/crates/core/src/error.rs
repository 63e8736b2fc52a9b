use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cannot normalize a zero-length vector")]
    Normalization,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid metric: {0}")]
    Metric(String),

    #[error("ingest failed{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Ingest { message: String, offset: Option<u64> },

    #[error("index is empty")]
    EmptyIndex,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("feedback error: {0}")]
    Feedback(String),

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn ingest(message: impl Into<String>) -> Self {
        Error::Ingest { message: message.into(), offset: None }
    }

    pub fn ingest_at(message: impl Into<String>, offset: u64) -> Self {
        Error::Ingest { message: message.into(), offset: Some(offset) }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::Parameter(message.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
