use rayon::prelude::*;

use super::stats::Region;
use crate::error::{invalid, Error, Result};
use crate::geoembed::{fit_attention, AttentionHead, AttentionTrainConfig, FusedEmbedding, LocationEncoder};
use crate::model::{EnsemblePrediction, LabelledPatch, TrainedModel};
use crate::raster::{GeoTransform, RasterGrid};

/// Per-pixel ensemble outputs over one tile: ensemble-mean fused embedding,
/// epistemic variance and ensemble-mean density.
#[derive(Debug, Clone)]
pub struct PixelField {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub geotransform: GeoTransform,
    /// Row-major `pixels × dim`.
    pub z: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub mean_density: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PixelField {
    #[inline]
    pub fn embedding(&self, pixel: usize) -> &[f64] {
        &self.z[pixel * self.dim..(pixel + 1) * self.dim]
    }

    /// Region embedding (mean over valid pixels) and planar center.
    pub fn region_embedding(&self, region: &Region) -> Option<FusedEmbedding> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for r in region.row..(region.row + region.side).min(self.height) {
            for c in region.col..(region.col + region.side).min(self.width) {
                let i = r * self.width + c;
                if self.valid[i] {
                    for (s, v) in sum.iter_mut().zip(self.embedding(i)) {
                        *s += v;
                    }
                    n += 1;
                }
            }
        }
        if n == 0 {
            return None;
        }
        sum.iter_mut().for_each(|s| *s /= n as f64);
        Some(FusedEmbedding { region_id: region.region_id, center: region_center(&self.geotransform, region), z: sum })
    }
}

pub fn region_center(gt: &GeoTransform, region: &Region) -> (f64, f64) {
    let half = region.side as f64 * gt.pixel_size / 2.0;
    let corner = gt.offset(region.row, region.col);
    (corner.origin_x + half, corner.origin_y + half)
}

/// Trained ensemble members, one attention head each, and the shared
/// location encoder: everything needed to score unlabelled tiles.
#[derive(Debug, Clone)]
pub struct ScoringEnsemble {
    members: Vec<TrainedModel>,
    heads: Vec<AttentionHead>,
    encoder: LocationEncoder,
}

impl ScoringEnsemble {
    pub fn new(members: Vec<TrainedModel>, heads: Vec<AttentionHead>, encoder: LocationEncoder) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("scoring ensemble needs at least one member"));
        }
        if heads.len() != members.len() {
            return Err(Error::DimensionMismatch { expected: members.len(), got: heads.len() });
        }
        for (m, h) in members.iter().zip(&heads) {
            let want = encoder.dim() + m.spec().embedding_width();
            if h.dim() != want {
                return Err(Error::DimensionMismatch { expected: want, got: h.dim() });
            }
            if m.spec().bands != members[0].spec().bands {
                return Err(invalid("ensemble members disagree on band count"));
            }
        }
        Ok(Self { members, heads, encoder })
    }

    /// Fits one attention head per member on the labelled patches.
    pub fn fit(
        members: Vec<TrainedModel>,
        encoder: LocationEncoder,
        patches: &[LabelledPatch],
        cfg: &AttentionTrainConfig,
    ) -> Result<Self> {
        let heads = members
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let cfg = AttentionTrainConfig { seed: cfg.seed.wrapping_add(i as u64 * 7919), ..cfg.clone() };
                fit_attention(m, &encoder, patches, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, heads, encoder)
    }

    pub fn members(&self) -> &[TrainedModel] {
        &self.members
    }

    pub fn heads(&self) -> &[AttentionHead] {
        &self.heads
    }

    pub fn encoder(&self) -> &LocationEncoder {
        &self.encoder
    }

    pub fn embedding_dim(&self) -> usize {
        self.heads[0].dim()
    }

    /// Runs every member over `image`. Pixels that are masked in the image
    /// or `false` in `valid` are marked invalid.
    pub fn pixel_field(&self, image: &RasterGrid, valid: Option<&[bool]>) -> Result<PixelField> {
        let px = image.pixel_count();
        if let Some(v) = valid {
            if v.len() != px {
                return Err(Error::DimensionMismatch { expected: px, got: v.len() });
            }
        }
        let dims: Vec<usize> = self.heads.iter().map(AttentionHead::dim).collect();
        if dims.iter().any(|&d| d != dims[0]) {
            return Err(invalid("attention heads disagree on embedding dimension"));
        }
        let dim = dims[0];
        let rd = self.encoder.dim();
        let gt = *image.geotransform();
        let mut r_all = vec![0.0; px * rd];
        for row in 0..image.height() {
            for col in 0..image.width() {
                let (x, y) = gt.pixel_center(row, col);
                let i = row * image.width() + col;
                self.encoder.encode_into(x, y, &mut r_all[i * rd..(i + 1) * rd]);
            }
        }
        let t = self.members.len() as f64;
        let mut z = vec![0.0; px * dim];
        let mut densities = Vec::with_capacity(self.members.len());
        let mut x = vec![0.0; dim];
        let mut zt = vec![0.0; dim];
        for (model, head) in self.members.iter().zip(&self.heads) {
            let out = model.run(image, true, None)?;
            let emb = out.embedding.as_deref().unwrap_or(&[]);
            let ew = model.spec().embedding_width();
            for i in 0..px {
                x[..rd].copy_from_slice(&r_all[i * rd..(i + 1) * rd]);
                x[rd..].copy_from_slice(&emb[i * ew..(i + 1) * ew]);
                head.fuse_concat_into(&x, &mut zt);
                for (acc, v) in z[i * dim..(i + 1) * dim].iter_mut().zip(&zt) {
                    *acc += v / t;
                }
            }
            densities.push(out.density);
        }
        let pred = EnsemblePrediction::from_members(densities)?;
        let valid: Vec<bool> = (0..px)
            .map(|i| !image.nodata_mask()[i] && valid.is_none_or(|v| v[i]) && pred.mean[i].is_finite())
            .collect();
        Ok(PixelField {
            width: image.width(),
            height: image.height(),
            dim,
            geotransform: gt,
            z,
            sigma2: pred.variance,
            mean_density: pred.mean,
            valid,
        })
    }
}
