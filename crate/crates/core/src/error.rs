//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration detected before any compute.
    #[error("config error: {0}")]
    Config(String),

    /// A call violated an interface contract (shape mismatch, wrong level count, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A dataset or checkpoint file is missing or corrupt.
    #[error("failed to load {file}: {reason}")]
    Load { file: PathBuf, reason: String },

    /// Training diverged (non-finite loss).
    #[error("training diverged: {0}")]
    Diverged(String),

    /// An operation received an empty input it cannot define a value for.
    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn load(file: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            file: file.into(),
            reason: reason.into(),
        }
    }
}
