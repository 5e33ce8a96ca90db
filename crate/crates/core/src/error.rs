//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the fusion pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input images disagree on spatial or channel dimensions.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    /// An input violated a documented precondition (range, finiteness, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of its documented domain.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A required file is missing from a scene or supervision directory.
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    /// A file exists but its contents are malformed.
    #[error("malformed {format} data in {}: {reason}", .path.display())]
    Format {
        format: &'static str,
        path: PathBuf,
        reason: String,
    },

    /// A checkpoint does not match the model spec it is being loaded into.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// Training or inference produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Exit-code class used by the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
