use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::raster::RasterGrid;

/// Mean absolute error of tree counts aggregated over `block_side ×
/// block_side` pixel blocks, in trees per hectare. Pixels masked in either
/// raster contribute to neither sum.
pub fn evaluate_mae(pred: &RasterGrid, truth: &RasterGrid, block_side: usize) -> Result<f64> {
    if !pred.same_extent(truth) {
        return Err(Error::GeoTransformMismatch);
    }
    if pred.bands() != 1 || truth.bands() != 1 {
        return Err(Error::BandMismatch { expected: 1, got: pred.bands().max(truth.bands()) });
    }
    let (w, h) = (pred.width(), pred.height());
    if block_side == 0 || w % block_side != 0 || h % block_side != 0 {
        return Err(invalid(format!("block side {block_side} does not divide a {w}x{h} raster")));
    }
    let ps = pred.geotransform().pixel_size;
    let block_ha = (block_side as f64 * ps).powi(2) / 10_000.0;
    let (pm, tm) = (pred.nodata_mask(), truth.nodata_mask());
    let (pv, tv) = (pred.band(0), truth.band(0));
    let mut total = 0.0;
    let mut blocks = 0usize;
    for br in (0..h).step_by(block_side) {
        for bc in (0..w).step_by(block_side) {
            let mut diff = 0.0;
            for r in br..br + block_side {
                for c in bc..bc + block_side {
                    let i = r * w + c;
                    if !pm[i] && !tm[i] {
                        diff += pv[i] - tv[i];
                    }
                }
            }
            total += diff.abs() / block_ha;
            blocks += 1;
        }
    }
    Ok(total / blocks as f64)
}

/// Retained mean squared error after discarding samples above an
/// uncertainty percentile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub percentile: f64,
    pub threshold: f64,
    pub retained: usize,
    pub retained_mse: f64,
}

/// For each percentile `p`, the MSE over samples whose uncertainty does not
/// exceed the value at rank `ceil(p·n/100) − 1` of the sorted uncertainties.
pub fn calibration_curve(uncertainties: &[f64], squared_errors: &[f64], percentiles: &[f64]) -> Result<Vec<CalibrationPoint>> {
    let n = uncertainties.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if squared_errors.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: squared_errors.len() });
    }
    if uncertainties.iter().chain(squared_errors).any(|v| !v.is_finite()) {
        return Err(invalid("calibration inputs must be finite"));
    }
    let mut sorted = uncertainties.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentiles
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p <= 100.0) {
                return Err(invalid(format!("percentile {p} outside (0, 100]")));
            }
            let rank = ((p * n as f64 / 100.0).ceil() as usize).clamp(1, n) - 1;
            let threshold = sorted[rank];
            let (mut sum, mut count) = (0.0, 0usize);
            for (&u, &e) in uncertainties.iter().zip(squared_errors) {
                if u <= threshold {
                    sum += e;
                    count += 1;
                }
            }
            Ok(CalibrationPoint { percentile: p, threshold, retained: count, retained_mse: sum / count as f64 })
        })
        .collect()
}

/// Percentile grid `step, 2·step, …, 100`.
pub fn percentile_grid(step: f64) -> Vec<f64> {
    let k = (100.0 / step).round() as usize;
    (1..=k).map(|i| (i as f64 * step).min(100.0)).collect()
}
