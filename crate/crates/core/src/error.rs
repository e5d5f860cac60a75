use std::path::PathBuf;

/// Errors produced by the estimation toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid edge ({u}, {v}) for dimension {m}")]
    InvalidEdge { u: usize, v: usize, m: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dense matrix of dimension {dim} exceeds the diagnostic cap {cap}")]
    Size { dim: usize, cap: usize },

    #[error("non-finite objective at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
