use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Malformed file content. `offset` is the byte offset where parsing failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Time tags out of order. `index` is the first tag whose timestamp is
    /// smaller than its predecessor's.
    #[error("time tags not sorted: tag {index} precedes its predecessor")]
    Ordering { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("window {window_ps} ps does not fit inside the histogram range")]
    WindowOutOfRange { window_ps: i64 },

    #[error("visibility undefined: no cross-polarized coincidences in a {window_ps} ps window")]
    UndefinedVisibility { window_ps: i64 },

    #[error("division by zero efficiency: {0}")]
    ZeroEfficiency(&'static str),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParams(msg.into())
}
