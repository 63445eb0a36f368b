//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh parse error: {0}")]
    MeshParse(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("placement failure: could not place object {object} after {retries} retries")]
    PlacementFailure { object: usize, retries: usize },

    #[error("scene rejected: {0}")]
    SceneRejected(String),

    #[error("camera below table plane")]
    CameraBelowTable,

    #[error("open contact: no edge within {max_march} px of ({x}, {y})")]
    OpenContact { x: i64, y: i64, max_march: usize },

    #[error("no executable grasp among top {0} candidates")]
    NoExecutableGrasp(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("data corruption: {0}")]
    Corrupt(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
