use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: [usize; 4],
        got: [usize; 4],
    },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("malformed image {path:?}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("training diverged at step {step} (lr {lr:e}, grad norm {grad_norm:e}): {msg}")]
    Diverged {
        step: u64,
        lr: f64,
        grad_norm: f64,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
