use thiserror::Error;

/// Errors produced anywhere in the decoupling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid unfolding mode {0} (expected 1, 2 or 3)")]
    InvalidMode(usize),

    #[error("invalid knot configuration: {0}")]
    Knots(String),

    #[error("invalid spline: {0}")]
    Spline(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
