use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parameter error: {0}")]
    Param(String),

    #[error("input too short: {0}")]
    InputTooShort(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{}: {msg}", path.display())]
    Audio { path: PathBuf, msg: String },

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("no within-group variance")]
    NoWithinVariance,

    #[error("non-finite loss: {0}")]
    Diverged(String),

    #[error("backward called without a matching forward cache")]
    MissingCache,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
