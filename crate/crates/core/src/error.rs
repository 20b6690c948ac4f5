//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failed: {0}")]
    Train(String),

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("duplicate source {0} for utterance {1}")]
    DuplicateSource(String, String),

    #[error("utterance id mismatch: {0} vs {1}")]
    UtteranceMismatch(String, String),

    #[error("revision {got} for {stream}: does not advance past {last}")]
    RevisionRegression { stream: String, got: u32, last: u32 },

    #[error("stream {0} is already finalized")]
    Finalized(String),

    #[error("stream {0} is already open")]
    StreamOpen(String),

    #[error("no such stream {0}")]
    NoStream(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("corrector failed: {0}")]
    Corrector(String),

    #[error("embedder failed: {0}")]
    Embedder(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn dimension(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }
}
