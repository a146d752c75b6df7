use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("weight file: {0}")]
    Weights(#[from] WeightFormatError),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Failures while decoding a `TFW1` weight file. Every variant is fatal;
/// no partially decoded model is ever returned.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WeightFormatError {
    #[error("bad magic {found:?}, expected \"TFW1\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {} (this build reads version {})", char::from(*.found), char::from(*.expected))]
    /// Raw version bytes (the fourth magic byte, ASCII).
    Version { found: u8, expected: u8 },

    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("layer {layer}: {reason}")]
    ShapeMismatch { layer: usize, reason: String },

    #[error("{0} trailing bytes after last layer")]
    TrailingBytes(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
