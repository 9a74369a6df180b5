use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::{HeadOutput, Mlp, Scratch};
use super::spec::{ModelSpec, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::raster::RasterGrid;

/// Default ensemble size.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;

/// Image and reference density over the same pixels.
#[derive(Debug, Clone)]
pub struct LabelledPatch {
    pub image: RasterGrid,
    pub density: RasterGrid,
}

impl LabelledPatch {
    pub fn new(image: RasterGrid, density: RasterGrid) -> Result<Self> {
        if !image.same_extent(&density) {
            return Err(Error::GeoTransformMismatch);
        }
        Ok(Self { image, density })
    }
}

/// Per-band standardization fitted on the training pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(bands: usize) -> Self {
        Self { mean: vec![0.0; bands], std: vec![1.0; bands] }
    }

    pub fn fit(grids: &[&RasterGrid]) -> Self {
        let bands = grids.first().map(|g| g.bands()).unwrap_or(0);
        let mut mean = vec![0.0; bands];
        let mut std = vec![1.0; bands];
        for b in 0..bands {
            let vals = grids.iter().flat_map(|g| {
                g.band(b).iter().zip(g.nodata_mask()).filter(|(_, &m)| !m).map(|(v, _)| *v)
            });
            let (mut n, mut m, mut m2) = (0.0f64, 0.0f64, 0.0f64);
            for v in vals {
                n += 1.0;
                let d = v - m;
                m += d / n;
                m2 += d * (v - m);
            }
            mean[b] = m;
            let var = if n > 1.0 { m2 / n } else { 0.0 };
            std[b] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }
}

/// Writes the context-window feature vector of pixel `(row, col)` into
/// `out`. Neighbours beyond the grid edge are clamped; masked neighbours
/// contribute the band mean (zero after standardization).
pub fn pixel_features(
    grid: &RasterGrid,
    norm: &Normalizer,
    radius: usize,
    row: usize,
    col: usize,
    out: &mut [f64],
) {
    let r = radius as isize;
    let (h, w) = (grid.height() as isize, grid.width() as isize);
    let mut k = 0;
    for dy in -r..=r {
        let rr = (row as isize + dy).clamp(0, h - 1) as usize;
        for dx in -r..=r {
            let cc = (col as isize + dx).clamp(0, w - 1) as usize;
            let masked = grid.is_nodata(rr, cc);
            for b in 0..grid.bands() {
                out[k] = if masked { 0.0 } else { (grid.get(b, rr, cc) - norm.mean[b]) / norm.std[b] };
                k += 1;
            }
        }
    }
}

/// Flat feature matrix of labelled training pixels.
#[derive(Debug, Clone)]
pub struct PixelDataset {
    pub input_dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

impl PixelDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn build(patches: &[LabelledPatch], spec: &ModelSpec, norm: &Normalizer) -> Result<Self> {
        let d = spec.input_dim();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut buf = vec![0.0; d];
        for p in patches {
            if p.image.bands() != spec.bands {
                return Err(Error::BandMismatch { expected: spec.bands, got: p.image.bands() });
            }
            for r in 0..p.image.height() {
                for c in 0..p.image.width() {
                    if p.image.is_nodata(r, c) || p.density.is_nodata(r, c) {
                        continue;
                    }
                    let label = p.density.get(0, r, c);
                    if !label.is_finite() || label < 0.0 {
                        return Err(invalid(format!("label {label} at ({r}, {c}) is not a finite count")));
                    }
                    pixel_features(&p.image, norm, spec.context_radius, r, c, &mut buf);
                    features.extend_from_slice(&buf);
                    labels.push(label);
                }
            }
        }
        Ok(Self { input_dim: d, features, labels })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// A fitted network together with its input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub mlp: Mlp,
    pub normalizer: Normalizer,
    /// Mean minibatch loss of each epoch.
    pub loss_history: Vec<f64>,
}

impl TrainedModel {
    pub fn spec(&self) -> &ModelSpec {
        self.mlp.spec()
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Trains one network with the two-head loss. Deterministic given `cfg.seed`.
pub fn train(patches: &[LabelledPatch], spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainedModel> {
    spec.validate()?;
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let grids: Vec<&RasterGrid> = patches.iter().map(|p| &p.image).collect();
    let normalizer = Normalizer::fit(&grids);
    let data = PixelDataset::build(patches, spec, &normalizer)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mlp = Mlp::new(spec, cfg.seed)?;
    fit(mlp, normalizer, &data, cfg)
}

/// Runs Adam on a prepared dataset starting from `mlp`.
pub fn fit(mut mlp: Mlp, normalizer: Normalizer, data: &PixelDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = mlp.spec().clone();
    let d = spec.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_da7a);
    let mut scratch = Scratch::new(&spec);
    let mut adam = Adam::new(mlp.num_params(), cfg.learning_rate);
    let mut grad = vec![0.0; mlp.num_params()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let per_epoch = cfg.samples_per_epoch.unwrap_or(data.len()).min(data.len()).max(1);
    let mut batch_x = Vec::with_capacity(cfg.batch_size * d);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        adam.set_learning_rate(cfg.learning_rate_at(epoch));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order[..per_epoch].chunks(cfg.batch_size).enumerate() {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(data.row(i));
                batch_y.push(data.labels[i]);
            }
            let loss = if spec.dropout_rate > 0.0 {
                mlp.loss_and_gradient(&batch_x, &batch_y, &mut scratch, Some(&mut rng), &mut grad)
            } else {
                mlp.loss_and_gradient::<ChaCha8Rng>(&batch_x, &batch_y, &mut scratch, None, &mut grad)
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                log::error!("training diverged at epoch {epoch}, step {step}; last finite loss {last_loss}");
                return Err(Error::NonFiniteLoss { epoch, step, last_loss });
            }
            last_loss = loss;
            adam.step(mlp.params_mut(), &grad);
            epoch_loss += loss;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok(TrainedModel { mlp, normalizer, loss_history: history })
}

/// Seed of ensemble member `index` derived from a base seed.
pub fn member_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains `members` networks that differ only in their seed, in parallel.
pub fn train_ensemble(
    patches: &[LabelledPatch],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    members: usize,
) -> Result<Vec<TrainedModel>> {
    let seeds: Vec<u64> = (0..members).map(|i| member_seed(cfg.seed, i)).collect();
    train_ensemble_with_seeds(patches, spec, cfg, &seeds)
}

/// Trains one network per seed in `seeds`, in parallel.
pub fn train_ensemble_with_seeds(
    patches: &[LabelledPatch],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<TrainedModel>> {
    if seeds.is_empty() {
        return Err(invalid("ensemble needs at least one member"));
    }
    spec.validate()?;
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let grids: Vec<&RasterGrid> = patches.iter().map(|p| &p.image).collect();
    let normalizer = Normalizer::fit(&grids);
    let data = PixelDataset::build(patches, spec, &normalizer)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let mlp = Mlp::new(spec, seed)?;
            fit(mlp, normalizer.clone(), &data, &cfg)
        })
        .collect()
}

/// Per-pixel outputs of one forward sweep over a raster.
#[derive(Debug, Clone)]
pub struct PixelOutputs {
    pub width: usize,
    pub height: usize,
    pub density: Vec<f64>,
    pub class_probability: Vec<f64>,
    /// Row-major `pixels × embedding_width`, present when requested.
    pub embedding: Option<Vec<f64>>,
}

impl TrainedModel {
    fn check_bands(&self, grid: &RasterGrid) -> Result<()> {
        if grid.bands() != self.spec().bands {
            return Err(Error::BandMismatch { expected: self.spec().bands, got: grid.bands() });
        }
        Ok(())
    }

    /// Runs the network over every pixel of `grid`. Dropout is active only
    /// when an RNG is supplied.
    pub fn run(
        &self,
        grid: &RasterGrid,
        with_embedding: bool,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<PixelOutputs> {
        self.check_bands(grid)?;
        let spec = self.spec();
        let (w, h) = (grid.width(), grid.height());
        let ew = spec.embedding_width();
        let mut scratch = Scratch::new(spec);
        let mut x = vec![0.0; spec.input_dim()];
        let mut density = Vec::with_capacity(w * h);
        let mut class_probability = Vec::with_capacity(w * h);
        let mut embedding = with_embedding.then(|| Vec::with_capacity(w * h * ew));
        for r in 0..h {
            for c in 0..w {
                pixel_features(grid, &self.normalizer, spec.context_radius, r, c, &mut x);
                let out: HeadOutput = self.mlp.forward(&x, &mut scratch, dropout.as_deref_mut());
                density.push(out.density);
                class_probability.push(out.class_probability());
                if let Some(e) = embedding.as_mut() {
                    e.extend_from_slice(scratch.embedding());
                }
            }
        }
        Ok(PixelOutputs { width: w, height: h, density, class_probability, embedding })
    }

    /// Deterministic per-pixel density and class probability rasters.
    pub fn predict(&self, patch: &RasterGrid) -> Result<(RasterGrid, RasterGrid)> {
        let out = self.run(patch, false, None)?;
        let gt = *patch.geotransform();
        let mask = Some(patch.nodata_mask().to_vec());
        let mask_values = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter()
                .zip(patch.nodata_mask())
                .map(|(x, &m)| if m { f64::NAN } else { x })
                .collect()
        };
        let density = RasterGrid::from_values(out.width, out.height, 1, gt, mask_values(out.density), mask.clone())?;
        let prob = RasterGrid::from_values(out.width, out.height, 1, gt, mask_values(out.class_probability), mask)?;
        Ok((density, prob))
    }

    /// Per-pixel embedding-tap activations, row-major `pixels × width`.
    pub fn embed_pixels(&self, patch: &RasterGrid) -> Result<Vec<f64>> {
        Ok(self.run(patch, true, None)?.embedding.unwrap_or_default())
    }

    /// Patch embedding: mean embedding-tap activation over unmasked pixels.
    pub fn embed(&self, patch: &RasterGrid) -> Result<Vec<f64>> {
        let ew = self.spec().embedding_width();
        let pixels = self.embed_pixels(patch)?;
        let mut sum = vec![0.0; ew];
        let mut n = 0usize;
        for (e, &masked) in pixels.chunks_exact(ew).zip(patch.nodata_mask()) {
            if !masked {
                for (s, v) in sum.iter_mut().zip(e) {
                    *s += v;
                }
                n += 1;
            }
        }
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f64);
        }
        Ok(sum)
    }
}
