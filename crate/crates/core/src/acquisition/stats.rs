use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::field::PixelField;
use super::sum::CompensatedSum;
use crate::error::{Error, Result};

/// Default region side in pixels (144 ha at 10 m).
pub const DEFAULT_REGION_SIDE: usize = 120;

/// Square pixel window of a tile: the unit of selection and annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: u64,
    pub shard_id: u32,
    pub row: usize,
    pub col: usize,
    pub side: usize,
}

/// Disjoint `side × side` windows tiling a `width × height` tile; partial
/// windows at the right and bottom edges are dropped. Ids are assigned
/// consecutively from `first_id` in row-major order.
pub fn tile_regions(width: usize, height: usize, side: usize, first_id: u64, shard_id: u32) -> Vec<Region> {
    if side == 0 {
        return Vec::new();
    }
    let (nr, nc) = (height / side, width / side);
    (0..nr)
        .flat_map(|r| (0..nc).map(move |c| (r, c)))
        .enumerate()
        .map(|(k, (r, c))| Region { region_id: first_id + k as u64, shard_id, row: r * side, col: c * side, side })
        .collect()
}

/// Sufficient statistics of one region: pixel count `n`, embedding sum `v`,
/// summed squared embedding norm `w` and summed uncertainty `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub region_id: u64,
    pub shard_id: u32,
    pub n: u64,
    pub v: Vec<f64>,
    pub w: f64,
    pub s: f64,
}

impl RegionStats {
    /// Mean embedding `v / n`.
    pub fn mean_embedding(&self) -> Vec<f64> {
        let n = self.n.max(1) as f64;
        self.v.iter().map(|x| x / n).collect()
    }
}

/// Accumulates statistics from `(embedding, uncertainty)` pixels. Returns
/// `None` for a region without pixels.
pub fn accumulate_stats<'a, I>(region_id: u64, shard_id: u32, dim: usize, pixels: I) -> Option<RegionStats>
where
    I: IntoIterator<Item = (&'a [f64], f64)>,
{
    let mut n = 0u64;
    let mut v = vec![CompensatedSum::new(); dim];
    let mut w = CompensatedSum::new();
    let mut s = CompensatedSum::new();
    for (z, sigma2) in pixels {
        n += 1;
        let mut norm = 0.0;
        for (acc, &zi) in v.iter_mut().zip(z) {
            acc.add(zi);
            norm += zi * zi;
        }
        w.add(norm);
        s.add(sigma2);
    }
    if n == 0 {
        log::info!("region {region_id} has no valid pixels; dropped");
        return None;
    }
    Some(RegionStats {
        region_id,
        shard_id,
        n,
        v: v.iter().map(CompensatedSum::value).collect(),
        w: w.value(),
        s: s.value(),
    })
}

/// Statistics of `region` over the valid pixels of `field`.
pub fn region_stats(region: &Region, field: &PixelField) -> Option<RegionStats> {
    let side = region.side;
    let rows = region.row..(region.row + side).min(field.height);
    let cols = region.col..(region.col + side).min(field.width);
    let pixels = rows
        .flat_map(|r| cols.clone().map(move |c| r * field.width + c))
        .filter(|&i| field.valid[i])
        .map(|i| (field.embedding(i), field.sigma2[i]));
    accumulate_stats(region.region_id, region.shard_id, field.dim, pixels)
}

/// Writes one JSON object per region.
pub fn write_stats_jsonl<W: Write>(mut w: W, stats: &[RegionStats]) -> Result<()> {
    for s in stats {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_jsonl<R: BufRead>(r: R) -> Result<Vec<RegionStats>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RegionStats = serde_json::from_str(&line).map_err(|e| Error::Format {
            format: "stats JSON-lines",
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}
