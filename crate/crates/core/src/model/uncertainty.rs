use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::TrainedModel;
use crate::error::{invalid, Error, Result};
use crate::raster::RasterGrid;

/// How ensemble members are obtained for uncertainty estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMode {
    /// Independently trained models, evaluated deterministically.
    Ensemble,
    /// Repeated stochastic passes of one model with dropout active.
    McDropout,
}

/// Member predictions with their mean and population variance per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub members: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl EnsemblePrediction {
    /// Builds the prediction from `T` equally long member vectors:
    /// `mean = Σ ŷ_t / T`, `variance = Σ (ŷ_t − mean)² / T`.
    pub fn from_members(members: Vec<Vec<f64>>) -> Result<Self> {
        let t = members.len();
        let n = members.first().map(Vec::len).ok_or_else(|| invalid("no ensemble members"))?;
        if let Some(bad) = members.iter().find(|m| m.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
        }
        // Welford updates: identical members leave every residual exactly 0.
        let mut mean = vec![0.0; n];
        let mut variance = vec![0.0; n];
        for (k, m) in members.iter().enumerate() {
            let k = (k + 1) as f64;
            for ((mu, m2), &v) in mean.iter_mut().zip(variance.iter_mut()).zip(m) {
                let d = v - *mu;
                *mu += d / k;
                *m2 += d * (v - *mu);
            }
        }
        variance.iter_mut().for_each(|v| *v = (*v / t as f64).max(0.0));
        Ok(Self { members, mean, variance })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Ensemble prediction over every pixel of `patch`.
///
/// In [`UncertaintyMode::Ensemble`] mode `models.len()` must equal
/// `members`; in MC-dropout mode the first model is run `members` times
/// with dropout masks drawn from `seed`.
pub fn predict_uncertainty(
    models: &[TrainedModel],
    patch: &RasterGrid,
    mode: UncertaintyMode,
    members: usize,
    seed: u64,
) -> Result<EnsemblePrediction> {
    if members == 0 {
        return Err(invalid("ensemble size must be at least 1"));
    }
    let outputs = match mode {
        UncertaintyMode::Ensemble => {
            if models.len() != members {
                return Err(invalid(format!(
                    "ensemble mode expects {members} models, got {}",
                    models.len()
                )));
            }
            models
                .iter()
                .map(|m| m.run(patch, false, None).map(|o| o.density))
                .collect::<Result<Vec<_>>>()?
        }
        UncertaintyMode::McDropout => {
            let model = models.first().ok_or_else(|| invalid("MC-dropout needs a model"))?;
            if model.spec().dropout_rate <= 0.0 {
                return Err(Error::DropoutDisabled);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..members)
                .map(|_| model.run(patch, false, Some(&mut rng)).map(|o| o.density))
                .collect::<Result<Vec<_>>>()?
        }
    };
    EnsemblePrediction::from_members(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_members_closed_form() {
        let p = EnsemblePrediction::from_members(vec![vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(p.mean, vec![2.0]);
        assert!((p.variance[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_members_have_zero_variance() {
        let m = vec![0.3, -1.7, 12.5];
        for t in [2, 3, 4, 5, 7] {
            let p = EnsemblePrediction::from_members(vec![m.clone(); t]).unwrap();
            assert!(p.variance.iter().all(|&v| v == 0.0));
            assert_eq!(p.mean, m);
        }
        let single = EnsemblePrediction::from_members(vec![m]).unwrap();
        assert!(single.variance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ragged_members_are_rejected() {
        assert!(EnsemblePrediction::from_members(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(EnsemblePrediction::from_members(vec![]).is_err());
    }
}
