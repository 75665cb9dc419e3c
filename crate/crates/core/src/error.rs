use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("malformed wav data: {0}")]
    MalformedWav(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("segment pushed out of order: t_start {t_start} precedes last entry {last}")]
    OutOfOrder { t_start: f64, last: f64 },

    #[error("target segment {session_id}#{seq_no} not found in candidates")]
    TargetMissing { session_id: String, seq_no: u32 },

    #[error("label index {0} outside the three-class set")]
    LabelOutOfRange(usize),

    #[error("unknown label {label:?} for mapping {source_kind}")]
    UnknownLabel { source_kind: &'static str, label: String },

    #[error("missing descriptor field: {0}")]
    MissingDescriptor(&'static str),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("backend timed out after {0:?}")]
    BackendTimeout(std::time::Duration),

    #[error("backend protocol: {0}")]
    Protocol(String),

    #[error("backend transport: {0}")]
    Transport(String),

    #[error("backend returned error for request {id}: {message}")]
    BackendFailure { id: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by an external backend rather than by local data.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::BackendTimeout(_)
                | Error::Protocol(_)
                | Error::Transport(_)
                | Error::BackendFailure { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
