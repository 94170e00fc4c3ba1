//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors, layers or fields.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Malformed file contents (PGM header, checkpoint magic, ...).
    #[error("format error: {0}")]
    Format(String),
    /// Invalid caller-supplied data (empty dataset, non-binary mask, ...).
    #[error("input error: {0}")]
    Input(String),
    /// Bad key or value in a run configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Operation called in the wrong order (e.g. backward without forward).
    #[error("state error: {0}")]
    State(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
