use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv header mismatch: expected {expected:?}, found {found:?}")]
    CsvHeader { expected: String, found: String },

    #[error("non-positive interval: delta_t = {0}")]
    NonPositiveInterval(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid trace spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
