use super::grid::RasterGrid;
use crate::error::{invalid, Error, Result};

/// Cloud-probability ceiling applied to training patches.
pub const TRAIN_MAX_CLOUD_PROB: f64 = 0.5;
/// Cloud-probability ceiling applied at validation and inference time.
pub const INFERENCE_MAX_CLOUD_PROB: f64 = 0.1;

/// Square window cut from a larger raster.
#[derive(Debug, Clone)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub size: usize,
    /// Planar coordinates of the window center.
    pub center: (f64, f64),
    pub grid: RasterGrid,
}

/// Number of windows along one axis for the given tiling.
pub fn tiling_count(extent: usize, patch_size: usize, stride: usize) -> usize {
    if patch_size > extent || stride == 0 {
        0
    } else {
        (extent - patch_size) / stride + 1
    }
}

/// Cuts `patch_size` windows every `stride` pixels, dropping any window in
/// which some pixel's cloud probability exceeds `max_cloud_prob`.
pub fn extract_patches(
    grid: &RasterGrid,
    patch_size: usize,
    stride: usize,
    cloud: &RasterGrid,
    max_cloud_prob: f64,
) -> Result<Vec<Patch>> {
    if patch_size == 0 || stride == 0 {
        return Err(invalid("patch_size and stride must be positive"));
    }
    if patch_size > grid.width() || patch_size > grid.height() {
        return Err(invalid(format!(
            "patch size {patch_size} exceeds {}x{} grid",
            grid.width(),
            grid.height()
        )));
    }
    if !grid.same_extent(cloud) {
        return Err(Error::GeoTransformMismatch);
    }
    let gt = grid.geotransform();
    let mut patches = Vec::new();
    for pr in 0..tiling_count(grid.height(), patch_size, stride) {
        for pc in 0..tiling_count(grid.width(), patch_size, stride) {
            let (row, col) = (pr * stride, pc * stride);
            let cloudy = (row..row + patch_size)
                .any(|r| (col..col + patch_size).any(|c| cloud.get(0, r, c) > max_cloud_prob));
            if cloudy {
                continue;
            }
            let half = patch_size as f64 * gt.pixel_size / 2.0;
            let corner = gt.offset(row, col);
            patches.push(Patch {
                row,
                col,
                size: patch_size,
                center: (corner.origin_x + half, corner.origin_y + half),
                grid: grid.window(row, col, patch_size, patch_size)?,
            });
        }
    }
    if patches.is_empty() {
        log::warn!("patch extraction produced no cloud-free patches (threshold {max_cloud_prob})");
    }
    Ok(patches)
}

/// Per-pixel mean of several predictions over the same extent; a pixel is
/// masked only where every input is masked.
pub fn late_fuse(predictions: &[RasterGrid]) -> Result<RasterGrid> {
    let first = predictions
        .first()
        .ok_or_else(|| invalid("late fusion needs at least one prediction"))?;
    for p in &predictions[1..] {
        if !first.same_extent(p) {
            return Err(Error::GeoTransformMismatch);
        }
        if p.bands() != first.bands() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bands", first.bands()),
                got: format!("{} bands", p.bands()),
            });
        }
    }
    let (w, h) = (first.width(), first.height());
    let mut out = RasterGrid::zeros(w, h, first.bands(), *first.geotransform())?;
    for r in 0..h {
        for c in 0..w {
            let valid: Vec<&RasterGrid> = predictions.iter().filter(|p| !p.is_nodata(r, c)).collect();
            if valid.is_empty() {
                out.set_nodata(r, c, true);
                for b in 0..first.bands() {
                    out.set(b, r, c, f64::NAN);
                }
                continue;
            }
            for b in 0..first.bands() {
                let sum: f64 = valid.iter().map(|p| p.get(b, r, c)).sum();
                out.set(b, r, c, sum / valid.len() as f64);
            }
        }
    }
    Ok(out)
}
