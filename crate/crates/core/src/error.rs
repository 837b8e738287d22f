use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate box ({x0}, {y0}, {x1}, {y1}): zero area")]
    DegenerateBox { x0: f64, y0: f64, x1: f64, y1: f64 },

    #[error("box ({x0}, {y0}, {x1}, {y1}) lies outside a {width}x{height} frame")]
    BoxOutOfBounds { x0: f64, y0: f64, x1: f64, y1: f64, width: usize, height: usize },

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("{0}")]
    InvalidInput(String),

    #[error("invalid configuration: {key}: {reason}")]
    Config { key: String, reason: String },

    #[error("non-finite loss component `{component}`")]
    NonFinite { component: String },

    #[error("training diverged at step {step}: `{component}` is not finite ({snapshot})")]
    Diverged { step: u64, component: String, snapshot: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch { expected: expected.to_vec(), actual: actual.to_vec() }
    }
}
