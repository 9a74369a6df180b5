use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the densal library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("output GSD {out_gsd} m is not an integer multiple of high-resolution GSD {hi_res_gsd} m")]
    GridRatio { hi_res_gsd: f64, out_gsd: f64 },

    #[error("tree {index} at ({x}, {y}) lies outside the raster extent")]
    PointOutsideExtent { index: usize, x: f64, y: f64 },

    #[error("geotransform mismatch between rasters")]
    GeoTransformMismatch,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("band count mismatch: model expects {expected}, patch has {got}")]
    BandMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty training dataset")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch}, step {step} (last finite loss {last_loss})")]
    NonFiniteLoss { epoch: usize, step: usize, last_loss: f64 },

    #[error("MC-dropout requires a dropout rate > 0")]
    DropoutDisabled,

    #[error("total pixel count is zero; nothing to reduce")]
    EmptyReduction,

    #[error("budget {budget} exceeds pool size {pool}")]
    BudgetExceedsPool { budget: usize, pool: usize },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
