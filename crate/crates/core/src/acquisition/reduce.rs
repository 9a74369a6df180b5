use serde::{Deserialize, Serialize};

use super::stats::RegionStats;
use super::sum::CompensatedSum;
use crate::error::{invalid, Error, Result};

/// Quantities shared by every region after the reduction barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    /// Total valid pixel count `N`.
    pub n_total: u64,
    /// Global mean embedding `μ`.
    pub mu: Vec<f64>,
    /// `Σ_q s_q`.
    pub sum_s: f64,
    /// `Σ_q D_q`.
    pub sum_d2: f64,
    pub regions: usize,
}

/// Total squared distance of a region's pixels to `mu`, from its sufficient
/// statistics: `D_q = w_q − 2⟨v_q, μ⟩ + n_q‖μ‖²`, clamped at zero.
pub fn region_distance(stats: &RegionStats, mu: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.add(stats.w);
    for (v, m) in stats.v.iter().zip(mu) {
        acc.add(-2.0 * v * m);
        acc.add(stats.n as f64 * m * m);
    }
    acc.value().max(0.0)
}

/// Regions ordered by id; the reduction order depends only on the ids, so
/// results do not depend on how regions were spread over shards.
pub(crate) fn canonical_order(stats: &[RegionStats]) -> Result<Vec<&RegionStats>> {
    let mut sorted: Vec<&RegionStats> = stats.iter().collect();
    sorted.sort_by_key(|s| s.region_id);
    if let Some(pair) = sorted.windows(2).find(|p| p[0].region_id == p[1].region_id) {
        return Err(invalid(format!("duplicate region id {}", pair[0].region_id)));
    }
    Ok(sorted)
}

/// Reduces per-region statistics into `(N, μ, Σs, Σd²)`.
pub fn global_reduce(stats: &[RegionStats]) -> Result<GlobalStats> {
    let sorted = canonical_order(stats)?;
    let dim = sorted.first().map(|s| s.v.len()).unwrap_or(0);
    if let Some(bad) = sorted.iter().find(|s| s.v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.v.len() });
    }
    let n_total: u64 = sorted.iter().map(|s| s.n).sum();
    if n_total == 0 {
        return Err(Error::EmptyReduction);
    }
    let mu: Vec<f64> = (0..dim)
        .map(|k| sorted.iter().map(|s| s.v[k]).collect::<CompensatedSum>().value() / n_total as f64)
        .collect();
    let sum_s = sorted.iter().map(|s| s.s).collect::<CompensatedSum>().value();
    let sum_d2 = sorted.iter().map(|s| region_distance(s, &mu)).collect::<CompensatedSum>().value();
    Ok(GlobalStats { n_total, mu, sum_s, sum_d2, regions: sorted.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(id: u64, z: &[f64]) -> RegionStats {
        RegionStats {
            region_id: id,
            shard_id: 0,
            n: z.len() as u64,
            v: vec![z.iter().sum()],
            w: z.iter().map(|x| x * x).sum(),
            s: 1.0,
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let g = global_reduce(&[stats(0, &[0.0, 2.0])]).unwrap();
        assert_eq!(g.n_total, 2);
        assert_eq!(g.mu, vec![1.0]);
        assert_eq!(g.sum_d2, 2.0);
    }

    #[test]
    fn identical_embeddings_have_no_spread() {
        let g = global_reduce(&[stats(0, &[1.5; 4]), stats(1, &[1.5; 3])]).unwrap();
        assert_eq!(g.sum_d2, 0.0);
    }

    #[test]
    fn zero_pixels_is_rejected() {
        let empty = RegionStats { region_id: 0, shard_id: 0, n: 0, v: vec![0.0], w: 0.0, s: 0.0 };
        assert!(matches!(global_reduce(&[empty]), Err(Error::EmptyReduction)));
        assert!(matches!(global_reduce(&[]), Err(Error::EmptyReduction)));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(global_reduce(&[stats(3, &[1.0]), stats(3, &[2.0])]).is_err());
    }
}
