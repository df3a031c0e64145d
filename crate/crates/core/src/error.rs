use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample rate mismatch: clip is {clip} Hz, config expects {expected} Hz")]
    SampleRateMismatch { clip: u32, expected: u32 },

    #[error("audio too short: {len} samples, need at least {needed}")]
    AudioTooShort { len: usize, needed: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty spectrogram")]
    EmptySpectrogram,

    #[error("segment layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty evaluation set")]
    EmptyEvalSet,

    #[error("no mel filter peak inside band [{lo}, {hi}] Hz")]
    EmptyBand { lo: f64, hi: f64 },

    #[error("non-finite loss term `{term}` at step {step}")]
    NonFiniteLoss { term: String, step: u64 },

    #[error("probability outside (0, 1): {0}")]
    DomainError(f64),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("version mismatch: file has version {found}, expected {expected}")]
    VersionError { found: u32, expected: u32 },

    #[error("invalid {format} file {path}: {reason}")]
    BadFormat {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("{path}:{line}: {reason}")]
    ParseError {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("header mismatch in {path}: {reason}")]
    HeaderMismatch { path: PathBuf, reason: String },

    #[error("utterance {0} has no frames")]
    UtteranceTooShort(String),

    #[error("wav decode error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
