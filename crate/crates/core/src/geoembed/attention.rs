//! Channel attention over the concatenated location encoding and network
//! activations: `z = sigmoid(W·[r, e] + b) ⊙ [r, e]`.
//!
//! The attention weights are fitted on the labelled set through an
//! auxiliary linear density readout `ŷ_aux = u·z + c` trained with the
//! squared-error part of the density loss, network activations held fixed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::encoder::LocationEncoder;
use crate::error::{invalid, Error, Result};
use crate::model::adam::Adam;
use crate::model::{sigmoid, LabelledPatch, TrainedModel};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    dim: usize,
    /// `W` (dim × dim, row-major), `b` (dim), `u` (dim), `c` (1).
    params: Vec<f64>,
}

impl AttentionHead {
    fn param_count(dim: usize) -> usize {
        dim * dim + 2 * dim + 1
    }

    /// Head with `W = 0`, `b = bias`, zero readout.
    pub fn constant(dim: usize, bias: f64) -> Self {
        let mut params = vec![0.0; Self::param_count(dim)];
        params[dim * dim..dim * dim + dim].fill(bias);
        Self { dim, params }
    }

    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0, 0.1 / (dim as f64).sqrt()).expect("positive std");
        let mut params = vec![0.0; Self::param_count(dim)];
        for p in &mut params[..dim * dim] {
            *p = w.sample(&mut rng);
        }
        let u = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
        for p in &mut params[dim * dim + dim..dim * dim + 2 * dim] {
            *p = u.sample(&mut rng);
        }
        Self { dim, params }
    }

    pub fn from_params(dim: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(dim) {
            return Err(Error::DimensionMismatch { expected: Self::param_count(dim), got: params.len() });
        }
        Ok(Self { dim, params })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn weights(&self) -> &[f64] {
        &self.params[..self.dim * self.dim]
    }

    fn bias(&self) -> &[f64] {
        &self.params[self.dim * self.dim..self.dim * self.dim + self.dim]
    }

    fn readout(&self) -> (&[f64], f64) {
        let d = self.dim;
        (&self.params[d * d + d..d * d + 2 * d], self.params[d * d + 2 * d])
    }

    /// Attention weights `a` for a concatenated input `x = [r, e]`.
    pub fn attention_into(&self, x: &[f64], a: &mut [f64]) {
        let d = self.dim;
        let w = self.weights();
        let b = self.bias();
        for i in 0..d {
            let row = &w[i * d..(i + 1) * d];
            let pre: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b[i];
            a[i] = sigmoid(pre);
        }
    }

    /// `z = a ⊙ x` for a concatenated input `x = [r, e]`.
    pub fn fuse_concat_into(&self, x: &[f64], z: &mut [f64]) {
        self.attention_into(x, z);
        for (zi, xi) in z.iter_mut().zip(x) {
            *zi *= xi;
        }
    }

    pub fn fuse(&self, r: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        if r.len() + e.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: r.len() + e.len() });
        }
        if r.iter().chain(e).any(|v| !v.is_finite()) {
            return Err(invalid("fuse inputs must be finite"));
        }
        let x: Vec<f64> = r.iter().chain(e).copied().collect();
        let mut z = vec![0.0; self.dim];
        self.fuse_concat_into(&x, &mut z);
        Ok(z)
    }

    /// Mean squared readout error over `(x, target)` rows and its gradient.
    pub fn readout_loss_and_gradient(&self, xs: &[f64], targets: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim;
        grad.fill(0.0);
        let n = targets.len() as f64;
        let (u, c) = self.readout();
        let mut a = vec![0.0; d];
        let mut total = 0.0;
        for (x, &t) in xs.chunks_exact(d).zip(targets) {
            self.attention_into(x, &mut a);
            let pred: f64 = (0..d).map(|i| u[i] * a[i] * x[i]).sum::<f64>() + c;
            let err = pred - t;
            total += err * err;
            let g = 2.0 * err / n;
            for i in 0..d {
                let z = a[i] * x[i];
                grad[d * d + d + i] += g * z;
                let d_pre = g * u[i] * x[i] * a[i] * (1.0 - a[i]);
                if d_pre != 0.0 {
                    let row = &mut grad[i * d..(i + 1) * d];
                    for (gw, xj) in row.iter_mut().zip(x) {
                        *gw += d_pre * xj;
                    }
                    grad[d * d + i] += d_pre;
                }
            }
            grad[d * d + 2 * d] += g;
        }
        total / n
    }

    pub fn readout_loss(&self, xs: &[f64], targets: &[f64]) -> f64 {
        let mut g = vec![0.0; self.params.len()];
        self.readout_loss_and_gradient(xs, targets, &mut g)
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

/// Optimizer settings for fitting an [`AttentionHead`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Cap on labelled pixels used for fitting.
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for AttentionTrainConfig {
    fn default() -> Self {
        Self { learning_rate: 3e-3, batch_size: 128, epochs: 4, max_samples: 8192, seed: 0 }
    }
}

/// Concatenated `[r, e]` rows and density targets for labelled pixels.
pub fn attention_inputs(
    model: &TrainedModel,
    encoder: &LocationEncoder,
    patches: &[LabelledPatch],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let rd = encoder.dim();
    let ew = model.spec().embedding_width();
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut r = vec![0.0; rd];
    for p in patches {
        let emb = model.embed_pixels(&p.image)?;
        let gt = p.image.geotransform();
        for row in 0..p.image.height() {
            for col in 0..p.image.width() {
                if p.image.is_nodata(row, col) || p.density.is_nodata(row, col) {
                    continue;
                }
                let (x, y) = gt.pixel_center(row, col);
                encoder.encode_into(x, y, &mut r);
                xs.extend_from_slice(&r);
                let i = row * p.image.width() + col;
                xs.extend_from_slice(&emb[i * ew..(i + 1) * ew]);
                ts.push(p.density.get(0, row, col));
            }
        }
    }
    Ok((xs, ts))
}

/// Fits the attention head of one ensemble member on labelled patches.
pub fn fit_attention(
    model: &TrainedModel,
    encoder: &LocationEncoder,
    patches: &[LabelledPatch],
    cfg: &AttentionTrainConfig,
) -> Result<AttentionHead> {
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(invalid("attention training needs batch_size ≥ 1 and learning_rate > 0"));
    }
    let dim = encoder.dim() + model.spec().embedding_width();
    let (xs, ts) = attention_inputs(model, encoder, patches)?;
    if ts.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.shuffle(&mut rng);
    order.truncate(cfg.max_samples.max(1));
    let mut head = AttentionHead::random(dim, cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(head.params.len(), cfg.learning_rate);
    let mut grad = vec![0.0; head.params.len()];
    let mut bx = Vec::with_capacity(cfg.batch_size * dim);
    let mut bt = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            bx.clear();
            bt.clear();
            for &i in chunk {
                bx.extend_from_slice(&xs[i * dim..(i + 1) * dim]);
                bt.push(ts[i]);
            }
            let loss = head.readout_loss_and_gradient(&bx, &bt, &mut grad);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, last_loss: total / batches.max(1) as f64 });
            }
            adam.step(head.params_mut(), &grad);
            total += loss;
            batches += 1;
        }
        log::debug!("attention epoch {epoch}: readout loss {:.6}", total / batches as f64);
    }
    Ok(head)
}
