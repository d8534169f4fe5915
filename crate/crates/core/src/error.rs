use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate batch in {op}: {count} values per channel, need at least 2")]
    DegenerateBatch { op: &'static str, count: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset layout error: {0}")]
    Layout(String),

    #[error("class {class} has no images")]
    EmptyClass { class: String },

    #[error("quota error: class {class} has {available} images but {required} are required")]
    Quota {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("image error for {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("architecture mismatch: checkpoint holds {found}, expected {expected}")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
        lr: f64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
