use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type. Variants are grouped loosely by subsystem; the
/// numeric ones (`NonFinite`) are the only errors a healthy training run
/// should ever be able to hit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("triangulation needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("all input points are collinear")]
    CollinearPoints,

    #[error("triangulation failed: {0}")]
    Triangulation(String),

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("module library is empty")]
    EmptyLibrary,

    #[error("no tasks provided")]
    EmptyTaskSet,

    #[error("empty batch")]
    EmptyBatch,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
