use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by tensor ops, models, and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("checkpoint {path}: {reason} (at byte offset {offset})")]
    Checkpoint {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("image format error: {0}")]
    Image(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
