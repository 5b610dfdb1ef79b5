use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("provider `{provider}` failed: {message}")]
    Provider {
        provider: &'static str,
        message: String,
        retryable: bool,
    },

    #[error("missing upstream artifact {path} (run `{stage}` first)")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    #[error("non-finite loss at step {step}: ldm={ldm}, ins={ins}")]
    NonFiniteLoss { step: u64, ldm: f64, ins: f64 },

    #[error("record `{0}` not found")]
    NotFound(String),

    #[error("record `{id}` is already {status}")]
    Conflict { id: String, status: String },

    #[error("corrupt artifact {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
