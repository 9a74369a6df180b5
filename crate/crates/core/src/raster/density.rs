//! Reference density maps from individual tree positions.
//!
//! Every tree spreads one unit of mass uniformly over a square kernel on a
//! fine grid; fine cells are then summed under each output pixel. The
//! square kernel is separable, so the fine-grid overlap is accumulated per
//! axis and combined as an outer product.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::grid::{GeoTransform, RasterGrid};
use crate::error::{invalid, Error, Result};

/// Axis-aligned rectangle in the planar frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// Tree center positions annotated inside one labelled block.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeAnnotationSet {
    block_id: String,
    bounds: Bounds,
    points: Vec<(f64, f64)>,
}

impl TreeAnnotationSet {
    pub fn new(block_id: impl Into<String>, bounds: Bounds, points: Vec<(f64, f64)>) -> Result<Self> {
        for (index, &(x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() || !bounds.contains(x, y) {
                return Err(Error::PointOutsideExtent { index, x, y });
            }
        }
        Ok(Self { block_id: block_id.into(), bounds, points })
    }

    /// Builds a set whose bounds are the bounding box of `points`.
    pub fn from_points(block_id: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        let mut b = Bounds {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for &(x, y) in &points {
            b.min_x = b.min_x.min(x);
            b.min_y = b.min_y.min(y);
            b.max_x = b.max_x.max(x);
            b.max_y = b.max_y.max(y);
        }
        if points.is_empty() {
            b = Bounds { min_x: 0.0, min_y: 0.0, max_x: 0.0, max_y: 0.0 };
        }
        Self::new(block_id, b, points)
    }

    pub fn block_id(&self) -> &str {
        &self.block_id
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeRecord {
    block_id: String,
    x_m: f64,
    y_m: f64,
}

/// Reads `block_id,x_m,y_m` CSV, grouping rows by block (sorted by id).
pub fn read_tree_csv<R: Read>(reader: R) -> Result<Vec<TreeAnnotationSet>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut blocks: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for rec in rdr.deserialize() {
        let rec: TreeRecord = rec?;
        blocks.entry(rec.block_id).or_default().push((rec.x_m, rec.y_m));
    }
    blocks
        .into_iter()
        .map(|(id, pts)| TreeAnnotationSet::from_points(id, pts))
        .collect()
}

pub fn write_tree_csv<W: Write>(writer: W, sets: &[TreeAnnotationSet]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for set in sets {
        for &(x_m, y_m) in set.points() {
            wtr.serialize(TreeRecord { block_id: set.block_id.clone(), x_m, y_m })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Kernel and fine-grid parameters for density rasterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityKernel {
    /// Fine grid spacing in meters; must divide the output pixel size.
    pub hi_res_gsd: f64,
    /// Side of the square smoothing kernel in meters.
    pub kernel_side: f64,
}

impl Default for DensityKernel {
    fn default() -> Self {
        Self { hi_res_gsd: 0.625, kernel_side: 20.0 }
    }
}

/// Output of [`rasterize_density`].
#[derive(Debug, Clone)]
pub struct DensityRaster {
    /// One band, trees per output pixel.
    pub grid: RasterGrid,
    /// Kernel mass that fell outside the raster and was dropped.
    pub dropped_mass: f64,
}

/// Integer ratio `out_gsd / hi_res_gsd`, or an error when it is not integral.
pub fn grid_ratio(hi_res_gsd: f64, out_gsd: f64) -> Result<usize> {
    if !(hi_res_gsd > 0.0) || !(out_gsd > 0.0) {
        return Err(invalid("grid spacings must be positive"));
    }
    let ratio = out_gsd / hi_res_gsd;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::GridRatio { hi_res_gsd, out_gsd });
    }
    Ok(rounded as usize)
}

/// Rasterizes tree positions into a density map on the grid described by
/// `geotransform`, `width` and `height`.
pub fn rasterize_density(
    trees: &TreeAnnotationSet,
    geotransform: &GeoTransform,
    width: usize,
    height: usize,
    kernel: &DensityKernel,
) -> Result<DensityRaster> {
    if !(kernel.kernel_side > 0.0 && kernel.kernel_side.is_finite()) {
        return Err(invalid("kernel_side must be positive"));
    }
    let ratio = grid_ratio(kernel.hi_res_gsd, geotransform.pixel_size)?;
    let mut grid = RasterGrid::zeros(width, height, 1, *geotransform)?;
    let max_x = geotransform.origin_x + width as f64 * geotransform.pixel_size;
    let max_y = geotransform.origin_y + height as f64 * geotransform.pixel_size;
    for (index, &(x, y)) in trees.points().iter().enumerate() {
        if x < geotransform.origin_x || x > max_x || y < geotransform.origin_y || y > max_y {
            return Err(Error::PointOutsideExtent { index, x, y });
        }
    }

    let fine = kernel.hi_res_gsd;
    let half = kernel.kernel_side / 2.0;
    let mut wx = vec![0.0; width];
    let mut wy = vec![0.0; height];
    let mut kept = 0.0;
    for &(x, y) in trees.points() {
        let (x_lo, x_hi) = axis_weights(x - geotransform.origin_x, half, fine, ratio, &mut wx);
        let (y_lo, y_hi) = axis_weights(y - geotransform.origin_y, half, fine, ratio, &mut wy);
        let sx: f64 = wx[x_lo..x_hi].iter().sum();
        let sy: f64 = wy[y_lo..y_hi].iter().sum();
        kept += sx * sy;
        let band = grid.band_mut(0);
        for r in y_lo..y_hi {
            let row = &mut band[r * width..(r + 1) * width];
            for c in x_lo..x_hi {
                row[c] += wy[r] * wx[c];
            }
        }
        wx[x_lo..x_hi].fill(0.0);
        wy[y_lo..y_hi].fill(0.0);
    }
    let dropped_mass = (trees.len() as f64 - kept).max(0.0);
    if dropped_mass > 0.0 {
        log::debug!(
            "block {}: {dropped_mass:.6} trees of kernel mass clipped at raster boundary",
            trees.block_id()
        );
    }
    Ok(DensityRaster { grid, dropped_mass })
}

/// Fills `out[pixel]` with the fraction of a 1-D box kernel of half-width
/// `half` centered at `pos` (relative to the grid origin) that overlaps each
/// output pixel, accumulated over fine cells of size `fine`. Returns the
/// touched output index range.
fn axis_weights(pos: f64, half: f64, fine: f64, ratio: usize, out: &mut [f64]) -> (usize, usize) {
    let n_fine = (out.len() * ratio) as i64;
    let lo = pos - half;
    let hi = pos + half;
    let first = ((lo / fine).floor() as i64).clamp(0, n_fine);
    let last = ((hi / fine).ceil() as i64).clamp(0, n_fine);
    let side = 2.0 * half;
    let mut touched = (usize::MAX, 0usize);
    for i in first..last {
        let c0 = i as f64 * fine;
        let c1 = (i + 1) as f64 * fine;
        let overlap = c1.min(hi) - c0.max(lo);
        if overlap > 0.0 {
            let px = i as usize / ratio;
            out[px] += overlap / side;
            touched.0 = touched.0.min(px);
            touched.1 = touched.1.max(px + 1);
        }
    }
    if touched.0 == usize::MAX {
        (0, 0)
    } else {
        touched
    }
}
