//! Dense rectifier network with a density head and a class-logit head.
//!
//! All parameters live in one flat vector so the optimizer, checkpointing
//! and finite-difference checks can treat them uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::ModelSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    w: usize,
    b: usize,
}

impl Layer {
    #[inline]
    fn row<'a>(&self, params: &'a [f64], o: usize) -> &'a [f64] {
        let start = self.w + o * self.inputs;
        &params[start..start + self.inputs]
    }
}

/// Raw network outputs for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    pub density: f64,
    pub logit: f64,
}

impl HeadOutput {
    pub fn class_probability(&self) -> f64 {
        sigmoid(self.logit)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-pixel two-head loss: squared density error plus binary cross-entropy
/// of the class logit against the indicator `label > 0`.
pub fn pixel_loss(out: &HeadOutput, label: f64) -> f64 {
    let target = if label > 0.0 { 1.0 } else { 0.0 };
    (out.density - label).powi(2) + softplus(out.logit) - target * out.logit
}

/// Reusable activation buffers.
#[derive(Debug, Clone)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    dropout: bool,
}

impl Scratch {
    pub fn new(spec: &ModelSpec) -> Self {
        Self {
            acts: spec.hidden.iter().map(|&w| vec![0.0; w]).collect(),
            masks: spec.hidden.iter().map(|&w| vec![1.0; w]).collect(),
            grads: spec.hidden.iter().map(|&w| vec![0.0; w]).collect(),
            dropout: false,
        }
    }

    /// Activations of the embedding tap from the most recent forward pass.
    pub fn embedding(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: ModelSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

impl Mlp {
    fn layout(spec: &ModelSpec) -> (Vec<Layer>, usize) {
        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        let mut offset = 0;
        let mut inputs = spec.input_dim();
        for &outputs in spec.hidden.iter().chain(std::iter::once(&2)) {
            let w = offset;
            let b = w + inputs * outputs;
            offset = b + outputs;
            layers.push(Layer { inputs, outputs, w, b });
            inputs = outputs;
        }
        (layers, offset)
    }

    /// He-initialized hidden layers, Xavier-initialized heads, zero biases.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (layers, n) = Self::layout(spec);
        let mut params = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let gain = if i == last { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / l.inputs as f64).sqrt()).expect("positive std");
            for p in &mut params[l.w..l.b] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(Self { spec: spec.clone(), layers, params })
    }

    /// Like [`Mlp::new`] but with both output heads zeroed.
    pub fn with_zero_heads(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut m = Self::new(spec, seed)?;
        let head = *m.layers.last().expect("head layer");
        m.params[head.w..head.b + head.outputs].fill(0.0);
        Ok(m)
    }

    pub fn from_params(spec: &ModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let (layers, n) = Self::layout(spec);
        if params.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: params.len() });
        }
        Ok(Self { spec: spec.clone(), layers, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Forward pass. With `dropout = Some(rng)` and a positive dropout rate,
    /// hidden activations are masked (inverted dropout); otherwise the pass
    /// is deterministic.
    pub fn forward<R: Rng>(&self, input: &[f64], scratch: &mut Scratch, dropout: Option<&mut R>) -> HeadOutput {
        debug_assert_eq!(input.len(), self.spec.input_dim());
        let rate = self.spec.dropout_rate;
        let mut rng = dropout.filter(|_| rate > 0.0);
        scratch.dropout = rng.is_some();
        let keep_scale = 1.0 / (1.0 - rate);
        let hidden = self.layers.len() - 1;
        for l in 0..hidden {
            let layer = self.layers[l];
            let (prev, rest) = scratch.acts.split_at_mut(l);
            let x: &[f64] = if l == 0 { input } else { &prev[l - 1] };
            let out = &mut rest[0];
            let mask = &mut scratch.masks[l];
            for o in 0..layer.outputs {
                let pre = dot(layer.row(&self.params, o), x) + self.params[layer.b + o];
                let mut a = pre.max(0.0);
                if let Some(r) = rng.as_deref_mut() {
                    let m = if r.random::<f64>() < rate { 0.0 } else { keep_scale };
                    mask[o] = m;
                    a *= m;
                }
                out[o] = a;
            }
        }
        let head = self.layers[hidden];
        let e = &scratch.acts[hidden - 1];
        HeadOutput {
            density: dot(head.row(&self.params, 0), e) + self.params[head.b],
            logit: dot(head.row(&self.params, 1), e) + self.params[head.b + 1],
        }
    }

    /// Back-propagates output gradients from the last forward pass into
    /// `grad`, accumulating.
    fn backward(&self, input: &[f64], scratch: &mut Scratch, d_density: f64, d_logit: f64, grad: &mut [f64]) {
        let hidden = self.layers.len() - 1;
        let head = self.layers[hidden];
        let delta = [d_density, d_logit];
        {
            let e = &scratch.acts[hidden - 1];
            let g_last = &mut scratch.grads[hidden - 1];
            g_last.fill(0.0);
            for (o, &d) in delta.iter().enumerate() {
                let w = head.w + o * head.inputs;
                axpy(d, e, &mut grad[w..w + head.inputs]);
                grad[head.b + o] += d;
                axpy(d, head.row(&self.params, o), g_last);
            }
        }
        for l in (0..hidden).rev() {
            let layer = self.layers[l];
            let (lower, upper) = scratch.grads.split_at_mut(l);
            let g = &mut upper[0];
            let a = &scratch.acts[l];
            let mask = &scratch.masks[l];
            for o in 0..layer.outputs {
                g[o] = if a[o] > 0.0 {
                    if scratch.dropout {
                        g[o] * mask[o]
                    } else {
                        g[o]
                    }
                } else {
                    0.0
                };
            }
            let x: &[f64] = if l == 0 { input } else { &scratch.acts[l - 1] };
            if l > 0 {
                lower[l - 1].fill(0.0);
            }
            for o in 0..layer.outputs {
                let d = g[o];
                if d == 0.0 {
                    continue;
                }
                let w = layer.w + o * layer.inputs;
                axpy(d, x, &mut grad[w..w + layer.inputs]);
                grad[layer.b + o] += d;
                if l > 0 {
                    axpy(d, layer.row(&self.params, o), &mut lower[l - 1]);
                }
            }
        }
    }

    /// Mean two-head loss over a batch and its gradient with respect to all
    /// parameters. `inputs` holds `labels.len()` rows of `input_dim` values.
    pub fn loss_and_gradient<R: Rng>(
        &self,
        inputs: &[f64],
        labels: &[f64],
        scratch: &mut Scratch,
        mut dropout: Option<&mut R>,
        grad: &mut [f64],
    ) -> f64 {
        let d = self.spec.input_dim();
        debug_assert_eq!(inputs.len(), labels.len() * d);
        grad.fill(0.0);
        let n = labels.len() as f64;
        let mut total = 0.0;
        for (x, &label) in inputs.chunks_exact(d).zip(labels) {
            let out = self.forward(x, scratch, dropout.as_deref_mut());
            total += pixel_loss(&out, label);
            let target = if label > 0.0 { 1.0 } else { 0.0 };
            let d_density = 2.0 * (out.density - label) / n;
            let d_logit = (sigmoid(out.logit) - target) / n;
            self.backward(x, scratch, d_density, d_logit, grad);
        }
        total / n
    }

    /// Mean two-head loss over a batch in deterministic mode.
    pub fn loss(&self, inputs: &[f64], labels: &[f64], scratch: &mut Scratch) -> f64 {
        let d = self.spec.input_dim();
        let total: f64 = inputs
            .chunks_exact(d)
            .zip(labels)
            .map(|(x, &label)| pixel_loss(&self.forward::<ChaCha8Rng>(x, scratch, None), label))
            .sum();
        total / labels.len() as f64
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec { bands: 2, context_radius: 0, hidden: vec![5, 3], dropout_rate: 0.0 }
    }

    #[test]
    fn zero_heads_give_zero_density() {
        let m = Mlp::with_zero_heads(&spec(), 1).unwrap();
        let mut s = Scratch::new(m.spec());
        let out = m.forward::<ChaCha8Rng>(&[0.0, 0.0], &mut s, None);
        assert_eq!(out.density, 0.0);
        assert_eq!(out.class_probability(), 0.5);
    }

    #[test]
    fn param_count_matches_layout() {
        let m = Mlp::new(&spec(), 0).unwrap();
        assert_eq!(m.num_params(), (2 * 5 + 5) + (5 * 3 + 3) + (3 * 2 + 2));
        assert!(Mlp::from_params(&spec(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn loss_matches_closed_form_for_known_outputs() {
        let out = HeadOutput { density: 1.5, logit: 0.0 };
        let expected = 0.25 + std::f64::consts::LN_2;
        assert!((pixel_loss(&out, 1.0) - expected).abs() < 1e-15);
        let out = HeadOutput { density: 0.0, logit: -800.0 };
        assert!(pixel_loss(&out, 0.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_masks_depend_on_rng() {
        let s = ModelSpec { dropout_rate: 0.5, ..spec() };
        let m = Mlp::new(&s, 3).unwrap();
        let mut sc = Scratch::new(&s);
        let x = [0.7, -0.2];
        let det = m.forward::<ChaCha8Rng>(&x, &mut sc, None);
        assert_eq!(det, m.forward::<ChaCha8Rng>(&x, &mut sc, None));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let outs: Vec<HeadOutput> = (0..20).map(|_| m.forward(&x, &mut sc, Some(&mut rng))).collect();
        assert!(outs.iter().any(|o| o.density != det.density));
    }
}
