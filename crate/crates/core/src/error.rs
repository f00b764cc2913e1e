use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("dataset error in frame {frame}: {message}")]
    Frame { frame: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("non-finite loss at step {step}; diagnostic written to {}", dump.display())]
    NonFiniteLoss { step: usize, dump: PathBuf },

    #[error("model produced non-finite output")]
    NonFiniteOutput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
