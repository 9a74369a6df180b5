use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Affine map from pixel indices to a planar working frame in meters.
///
/// `(origin_x, origin_y)` is the outer corner of pixel `(row 0, col 0)`;
/// columns advance along +x and rows along +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(invalid(format!("pixel_size must be positive, got {pixel_size}")));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(invalid("geotransform origin must be finite"));
        }
        Ok(Self { origin_x, origin_y, pixel_size })
    }

    /// Planar coordinates of the center of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y + (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Fractional `(col, row)` position of a planar point.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size,
            (y - self.origin_y) / self.pixel_size,
        )
    }

    /// Geotransform of a window whose top-left pixel is `(row, col)`.
    pub fn offset(&self, row: usize, col: usize) -> Self {
        Self {
            origin_x: self.origin_x + col as f64 * self.pixel_size,
            origin_y: self.origin_y + row as f64 * self.pixel_size,
            pixel_size: self.pixel_size,
        }
    }
}

/// Multi-band 2D grid of scalar samples with a per-pixel nodata mask.
///
/// Values are stored band-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    width: usize,
    height: usize,
    bands: usize,
    geotransform: GeoTransform,
    values: Vec<f64>,
    nodata: Vec<bool>,
}

impl RasterGrid {
    pub fn zeros(width: usize, height: usize, bands: usize, geotransform: GeoTransform) -> Result<Self> {
        Self::filled(width, height, bands, geotransform, 0.0)
    }

    pub fn filled(
        width: usize,
        height: usize,
        bands: usize,
        geotransform: GeoTransform,
        value: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("raster dimensions must be non-zero"));
        }
        if bands == 0 {
            return Err(invalid("raster must have at least one band"));
        }
        Ok(Self {
            width,
            height,
            bands,
            geotransform,
            values: vec![value; width * height * bands],
            nodata: vec![false; width * height],
        })
    }

    pub fn from_values(
        width: usize,
        height: usize,
        bands: usize,
        geotransform: GeoTransform,
        values: Vec<f64>,
        nodata: Option<Vec<bool>>,
    ) -> Result<Self> {
        let mut grid = Self::zeros(width, height, bands, geotransform)?;
        if values.len() != grid.values.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", grid.values.len()),
                got: format!("{} values", values.len()),
            });
        }
        grid.values = values;
        if let Some(mask) = nodata {
            if mask.len() != width * height {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} mask entries", width * height),
                    got: format!("{} mask entries", mask.len()),
                });
            }
            grid.nodata = mask;
        }
        grid.validate()?;
        Ok(grid)
    }

    /// Checks that every unmasked sample is finite.
    pub fn validate(&self) -> Result<()> {
        let px = self.width * self.height;
        for b in 0..self.bands {
            for (i, v) in self.values[b * px..(b + 1) * px].iter().enumerate() {
                if !self.nodata[i] && !v.is_finite() {
                    return Err(invalid(format!(
                        "non-finite value at band {b}, pixel {i} that is not masked"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn geotransform(&self) -> &GeoTransform {
        &self.geotransform
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.values[(band * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, band: usize, row: usize, col: usize, value: f64) {
        self.values[(band * self.height + row) * self.width + col] = value;
    }

    pub fn band(&self, band: usize) -> &[f64] {
        let px = self.pixel_count();
        &self.values[band * px..(band + 1) * px]
    }

    pub fn band_mut(&mut self, band: usize) -> &mut [f64] {
        let px = self.pixel_count();
        &mut self.values[band * px..(band + 1) * px]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.nodata[row * self.width + col]
    }

    pub fn set_nodata(&mut self, row: usize, col: usize, masked: bool) {
        self.nodata[row * self.width + col] = masked;
    }

    pub fn nodata_mask(&self) -> &[bool] {
        &self.nodata
    }

    /// Sum of one band over unmasked pixels.
    pub fn band_sum(&self, band: usize) -> f64 {
        self.band(band)
            .iter()
            .zip(&self.nodata)
            .filter(|(_, &m)| !m)
            .map(|(v, _)| v)
            .sum()
    }

    pub fn same_extent(&self, other: &RasterGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.geotransform == other.geotransform
    }

    /// Copy of the `height × width` window starting at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Result<RasterGrid> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(invalid(format!(
                "window {height}x{width} at ({row}, {col}) outside {}x{} raster",
                self.height, self.width
            )));
        }
        let mut out = RasterGrid::zeros(width, height, self.bands, self.geotransform.offset(row, col))?;
        for b in 0..self.bands {
            for r in 0..height {
                for c in 0..width {
                    out.set(b, r, c, self.get(b, row + r, col + c));
                }
            }
        }
        for r in 0..height {
            for c in 0..width {
                out.set_nodata(r, c, self.is_nodata(row + r, col + c));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_centers_follow_affine_map() {
        let gt = GeoTransform::new(100.0, 200.0, 10.0).unwrap();
        assert_eq!(gt.pixel_center(0, 0), (105.0, 205.0));
        assert_eq!(gt.pixel_center(2, 3), (135.0, 225.0));
        assert_eq!(gt.to_pixel(135.0, 225.0), (3.5, 2.5));
    }

    #[test]
    fn rejects_non_positive_pixel_size() {
        assert!(GeoTransform::new(0.0, 0.0, 0.0).is_err());
        assert!(GeoTransform::new(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn window_copies_values_and_shifts_origin() {
        let gt = GeoTransform::new(0.0, 0.0, 10.0).unwrap();
        let values: Vec<f64> = (0..16).map(f64::from).collect();
        let grid = RasterGrid::from_values(4, 4, 1, gt, values, None).unwrap();
        let w = grid.window(1, 2, 2, 2).unwrap();
        assert_eq!(w.get(0, 0, 0), 6.0);
        assert_eq!(w.get(0, 1, 1), 11.0);
        assert_eq!(w.geotransform().origin_x, 20.0);
        assert_eq!(w.geotransform().origin_y, 10.0);
        assert!(grid.window(3, 3, 2, 2).is_err());
    }

    #[test]
    fn masked_pixels_may_hold_non_finite_values() {
        let gt = GeoTransform::new(0.0, 0.0, 1.0).unwrap();
        let ok = RasterGrid::from_values(2, 1, 1, gt, vec![f64::NAN, 1.0], Some(vec![true, false]));
        assert!(ok.is_ok());
        let bad = RasterGrid::from_values(2, 1, 1, gt, vec![f64::NAN, 1.0], None);
        assert!(bad.is_err());
    }
}
