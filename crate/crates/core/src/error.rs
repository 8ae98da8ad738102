use std::path::PathBuf;

use thiserror::Error;

use crate::io::ply::PlyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("coincident points in pair")]
    CoincidentPoints,

    #[error("object is entirely outside the camera frustum")]
    OutsideFrustum,

    #[error("malformed model table: {0}")]
    TableFormat(String),

    #[error("ply: {0}")]
    Ply(#[from] PlyError),

    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("intrinsics: {0}")]
    Intrinsics(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
