use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's documented precondition (shape, channel
    /// count, divisibility, ...).
    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },

    /// Reflective padding needs at least two pixels along the padded axis.
    #[error("input too small for {op}: {height}x{width} cannot be reflect-padded by {pad}")]
    InputTooSmall {
        op: &'static str,
        height: usize,
        width: usize,
        pad: usize,
    },

    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("failed to decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("stage {stage} requires stage {missing} to be trained first")]
    MissingStage { stage: u8, missing: u8 },

    #[error(transparent)]
    Checkpoint(#[from] crate::training::checkpoint::CheckpointError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract { op, msg: msg.into() }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
