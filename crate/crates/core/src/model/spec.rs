use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Architecture of the reference per-pixel network.
///
/// Each pixel is described by its band vector and those of its neighbours in
/// a `(2 * context_radius + 1)²` window. Hidden layers use rectifiers; the
/// last hidden layer is the embedding tap. Two heads read from it: a linear
/// density head and a logistic class head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub bands: usize,
    pub context_radius: usize,
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
}

impl ModelSpec {
    pub fn window_side(&self) -> usize {
        2 * self.context_radius + 1
    }

    pub fn input_dim(&self) -> usize {
        self.bands * self.window_side() * self.window_side()
    }

    pub fn embedding_width(&self) -> usize {
        self.hidden.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            return Err(invalid("model needs at least one input band"));
        }
        if self.hidden.len() < 2 {
            return Err(invalid("model needs at least two hidden layers"));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(invalid("hidden layer widths must be positive"));
        }
        if self.embedding_width() < 2 {
            return Err(invalid("embedding width must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid("dropout_rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { bands: 4, context_radius: 1, hidden: vec![64, 64], dropout_rate: 0.1 }
    }
}

/// Optimizer settings. The optimizer is Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Pixels drawn (without replacement) per epoch; `None` uses all.
    pub samples_per_epoch: Option<usize>,
    /// Cosine decay of the learning rate down to this fraction of its
    /// initial value at the last epoch; 1 keeps it constant.
    pub final_lr_fraction: f64,
}

impl TrainConfig {
    /// Learning rate used during `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_fraction >= 1.0 {
            return self.learning_rate;
        }
        let progress = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        let f = self.final_lr_fraction;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(invalid("final_lr_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, batch_size: 128, epochs: 100, seed: 0, samples_per_epoch: None, final_lr_fraction: 1.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelSpec::default().validate().unwrap();
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.batch_size, 128);
    }

    #[test]
    fn spec_invariants() {
        let mut s = ModelSpec::default();
        assert_eq!(s.input_dim(), 36);
        s.hidden = vec![8];
        assert!(s.validate().is_err());
        s.hidden = vec![8, 1];
        assert!(s.validate().is_err());
        s.hidden = vec![8, 4];
        s.dropout_rate = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn config_invariants() {
        let bad_lr = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad_lr.validate().is_err());
        let bad_batch = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(bad_batch.validate().is_err());
    }
}
