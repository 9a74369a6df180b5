//! PGRD raster files and per-scene JSON manifests.
//!
//! PGRD layout (little-endian): magic `PGRD`, version `u16 = 1`, width
//! `u32`, height `u32`, bands `u16`, dtype `u8` (0 = float32), geotransform
//! as three `f64` (origin_x, origin_y, pixel_size), nodata sentinel `f32`,
//! then the band-major, row-major `f32` payload. Masked pixels carry the
//! sentinel in every band.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::{GeoTransform, RasterGrid};
use crate::error::{Error, Result};

pub const PGRD_MAGIC: &[u8; 4] = b"PGRD";
pub const PGRD_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DEFAULT_NODATA: f32 = -9999.0;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format { format: "PGRD", reason: reason.into() }
}

/// Header fields of a PGRD file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgrdHeader {
    pub width: u32,
    pub height: u32,
    pub bands: u16,
    pub geotransform: GeoTransform,
    pub nodata: f32,
}

pub fn write_pgrd<W: Write>(mut w: W, grid: &RasterGrid, nodata: f32) -> Result<()> {
    let width = u32::try_from(grid.width()).map_err(|_| format_err("width exceeds u32"))?;
    let height = u32::try_from(grid.height()).map_err(|_| format_err("height exceeds u32"))?;
    let bands = u16::try_from(grid.bands()).map_err(|_| format_err("band count exceeds u16"))?;
    let gt = grid.geotransform();
    w.write_all(PGRD_MAGIC)?;
    w.write_all(&PGRD_VERSION.to_le_bytes())?;
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&height.to_le_bytes())?;
    w.write_all(&bands.to_le_bytes())?;
    w.write_all(&[DTYPE_F32])?;
    for v in [gt.origin_x, gt.origin_y, gt.pixel_size] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&nodata.to_le_bytes())?;
    let px = grid.pixel_count();
    let mask = grid.nodata_mask();
    let mut buf = Vec::with_capacity(grid.values().len() * 4);
    for (i, v) in grid.values().iter().enumerate() {
        let value = if mask[i % px] { nodata } else { *v as f32 };
        buf.extend_from_slice(&value.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| format_err(format!("truncated header: {e}")))?;
    Ok(b)
}

pub fn read_pgrd_header<R: Read>(r: &mut R) -> Result<PgrdHeader> {
    let magic: [u8; 4] = read_exact(r)?;
    if &magic != PGRD_MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = u16::from_le_bytes(read_exact(r)?);
    if version != PGRD_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let width = u32::from_le_bytes(read_exact(r)?);
    let height = u32::from_le_bytes(read_exact(r)?);
    let bands = u16::from_le_bytes(read_exact(r)?);
    let [dtype] = read_exact::<1, _>(r)?;
    if dtype != DTYPE_F32 {
        return Err(format_err(format!("unsupported dtype {dtype}")));
    }
    let ox = f64::from_le_bytes(read_exact(r)?);
    let oy = f64::from_le_bytes(read_exact(r)?);
    let ps = f64::from_le_bytes(read_exact(r)?);
    let nodata = f32::from_le_bytes(read_exact(r)?);
    let geotransform = GeoTransform::new(ox, oy, ps).map_err(|e| format_err(e.to_string()))?;
    Ok(PgrdHeader { width, height, bands, geotransform, nodata })
}

pub fn read_pgrd<R: Read>(mut r: R) -> Result<RasterGrid> {
    let hdr = read_pgrd_header(&mut r)?;
    let (w, h, b) = (hdr.width as usize, hdr.height as usize, hdr.bands as usize);
    let px = w * h;
    let mut raw = vec![0u8; px * b * 4];
    r.read_exact(&mut raw).map_err(|e| format_err(format!("truncated payload: {e}")))?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let is_sentinel = |v: f32| v == hdr.nodata || (v.is_nan() && hdr.nodata.is_nan());
    let mask: Vec<bool> = (0..px).map(|i| (0..b).all(|band| is_sentinel(values[band * px + i]))).collect();
    let values: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask[i % px] { f64::NAN } else { f64::from(v) })
        .collect();
    RasterGrid::from_values(w, h, b, hdr.geotransform, values, Some(mask))
}

pub fn save_pgrd(path: impl AsRef<Path>, grid: &RasterGrid) -> Result<()> {
    write_pgrd(BufWriter::new(File::create(path)?), grid, DEFAULT_NODATA)
}

pub fn load_pgrd(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    read_pgrd(BufReader::new(f))
}

/// One acquisition (or labelled block) and the rasters that describe it.
/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub timestamps: Vec<String>,
    pub image: PathBuf,
    pub cloud: PathBuf,
    /// Band of `cloud` holding cloud probability.
    pub cloud_band: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<PathBuf>,
}

impl SceneManifest {
    pub fn files(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.image, &self.cloud].into_iter().chain(self.density.as_ref())
    }

    /// Checks that every referenced raster exists and that all share one
    /// geotransform and extent.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let mut reference: Option<PgrdHeader> = None;
        for rel in self.files() {
            let path = base.join(rel);
            let f = File::open(&path).map_err(|_| Error::MissingFile(path.clone()))?;
            let hdr = read_pgrd_header(&mut BufReader::new(f))?;
            if rel == &self.cloud && self.cloud_band >= hdr.bands as usize {
                return Err(format_err(format!(
                    "cloud band {} missing from {}",
                    self.cloud_band,
                    path.display()
                )));
            }
            match reference {
                None => reference = Some(hdr),
                Some(r) => {
                    if r.geotransform != hdr.geotransform || r.width != hdr.width || r.height != hdr.height {
                        return Err(Error::GeoTransformMismatch);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }
}
