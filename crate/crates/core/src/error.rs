use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of bounds: {0}")]
    Bounds(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no patch centred at ({x}, {y}): window of size {patch_size} does not fit")]
    NoPatch { x: usize, y: usize, patch_size: usize },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("corrupt data: {0}")]
    Corruption(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("slice {index}: {source}")]
    Slice {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
