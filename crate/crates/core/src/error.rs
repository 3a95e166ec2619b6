use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum NcaError {
    /// A caller broke an operation's shape or value contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed raster, manifest, config or checkpoint content.
    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss; a diagnostic checkpoint was written if a path is given.
    #[error("non-finite loss at epoch {epoch}{}", .checkpoint.as_ref().map(|p| format!(" (diagnostic checkpoint: {})", p.display())).unwrap_or_default())]
    NonFiniteLoss {
        epoch: u64,
        checkpoint: Option<PathBuf>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, NcaError>;

pub(crate) fn contract(msg: impl Into<String>) -> NcaError {
    NcaError::Contract(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> NcaError {
    let path = path.into();
    move |source| NcaError::Io { path, source }
}
