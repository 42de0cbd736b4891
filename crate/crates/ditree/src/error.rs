use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("map parse error: {0}")]
    MapParse(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
