use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid instance: {0}")]
    Validation(String),
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Decode { path: PathBuf, offset: usize },
    #[error("overlapping spans [{0}, {1}) and [{2}, {3})")]
    OverlappingSpans(usize, usize, usize, usize),
    #[error("span [{start}, {end}) out of range for length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("need at least {needed} sentences to split, got {got}")]
    TooFewSentences { needed: usize, got: usize },
    #[error("input of {len} tokens exceeds encoder limit {limit}")]
    TooLong { len: usize, limit: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sentiment corpus must contain both polarity classes")]
    SingleClass,
    #[error("non-finite loss at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint mismatch: expected vocab hash {expected}, checkpoint has {found}")]
    HashMismatch { expected: String, found: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
