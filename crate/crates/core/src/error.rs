use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("label fraction {fraction} leaves class {class} with zero samples")]
    Underflow { class: String, fraction: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("negative queue is empty")]
    EmptyQueue,

    #[error("capacity error: batch of {batch} exceeds queue capacity {capacity}")]
    Capacity { batch: usize, capacity: usize },

    #[error("non-finite loss at step {step}; batch ids: {batch_ids:?}")]
    NonFinite { step: u64, batch_ids: Vec<String> },

    #[error("config mismatch on resume:\n{0}")]
    ConfigMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("missing linear probe: {0}")]
    MissingProbe(String),

    #[error("unknown augmentation preset `{0}`")]
    UnknownPreset(String),

    #[error("image decode error in {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    /// Stable machine-readable tag used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::Format(_) => "format",
            Error::Underflow { .. } => "underflow",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Mode(_) => "mode",
            Error::EmptyQueue => "empty-queue",
            Error::Capacity { .. } => "capacity",
            Error::NonFinite { .. } => "non-finite",
            Error::ConfigMismatch(_) => "config-mismatch",
            Error::Checkpoint(_) => "checkpoint",
            Error::LabelMismatch(_) => "label-mismatch",
            Error::MissingProbe(_) => "missing-probe",
            Error::UnknownPreset(_) => "unknown-preset",
            Error::Image { .. } => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
