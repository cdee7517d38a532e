use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("format error: {0}")]
    Format(String),
    #[error("input too short: need at least {needed} samples, got {got}")]
    InputTooShort { needed: usize, got: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index {index} out of range for {len} tasks")]
    Index { index: usize, len: usize },
    #[error("state error: {0}")]
    State(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
