//! Crate-wide error type.

use crate::train::TrainRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("gradient check step must be positive, got {eps}")]
    BadEps { eps: f64 },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("prompt length {got} does not match model prompt dimension {expected}")]
    PromptLength { got: usize, expected: usize },

    #[error("time {t} outside [0, 1]")]
    TimeOutOfRange { t: f64 },

    #[error("invalid mixture spec: {0}")]
    InvalidMixture(String),

    #[error("invalid dataset spec: {0}")]
    InvalidDataset(String),

    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),

    #[error("sway coefficient {s} outside admissible range [{lo}, {hi}]")]
    SwayOutOfRange { s: f64, lo: f64, hi: f64 },

    #[error("non-finite state at integration step {step}")]
    NonFiniteState { step: usize },

    #[error("empty condition list")]
    EmptyBatch,

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("sample-set size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("training diverged at step {step}: {what}")]
    Diverged {
        step: usize,
        what: String,
        record: Box<TrainRecord>,
    },

    #[error("checkpoint not found: {path}")]
    CheckpointNotFound { path: String },

    #[error("bad checkpoint magic (expected \"GFFM\")")]
    CheckpointMagic,

    #[error("checkpoint version mismatch: file has {found}, supported {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("corrupt checkpoint length: {0}")]
    CheckpointCorrupt(String),

    #[error("checkpoint arch mismatch: file has {found}, expected {expected}")]
    CheckpointArch { found: String, expected: String },

    #[error("config error at line {line}: {section}.{key}: {message}")]
    Config {
        line: usize,
        section: String,
        key: String,
        message: String,
    },

    #[error("config error: {0}")]
    ConfigGeneral(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
