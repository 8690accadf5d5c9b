use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("unsupported bit width {bits} (supported: {supported})")]
    UnsupportedBits { bits: u32, supported: &'static str },

    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix of {rows}x{cols} does not fit a {max_rows}x{max_cols} crossbar")]
    ExceedsCrossbar {
        rows: usize,
        cols: usize,
        max_rows: usize,
        max_cols: usize,
    },

    /// A protocol violation: double staging, consuming a missing trace,
    /// stale gradients and the like.
    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: u64, detail: String },

    #[error("dataset file {}: {reason}", path.display())]
    Dataset { path: PathBuf, reason: String },

    #[error("classifier failure: {0}")]
    Classifier(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("config serialization error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
