//! Weighted k-means with weighted k-means++ seeding.
//!
//! Minimizes `Σ w_i ‖z_i − c_{a(i)}‖²` with centroid update
//! `c = Σ w_i z_i / Σ w_i`. Weights are normalized to unit sum on entry, so
//! any uniform rescaling of the weights yields the same clustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geoembed::distance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop when the relative objective change falls below this.
    pub tolerance: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iter: 100, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `k × dim`, row-major.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub reseeded: usize,
}

const PAR_THRESHOLD: usize = 4096;

fn nearest(z: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = distance(z, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    if points.len() * centroids.len() >= PAR_THRESHOLD {
        points.par_iter().map(|z| nearest(z, centroids)).collect()
    } else {
        points.iter().map(|z| nearest(z, centroids)).collect()
    }
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return Some(i);
            }
            u -= w;
            last = Some(i);
        }
    }
    last
}

fn plus_plus_init(points: &[Vec<f64>], weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = sample_weighted(rng, weights).unwrap_or(0);
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|z| distance(z, &points[first])).collect();
    while centroids.len() < k {
        let scores: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        // All remaining mass at distance zero: fall back to the first
        // point not already a centroid.
        let next = sample_weighted(rng, &scores)
            .or_else(|| (0..points.len()).find(|&i| !centroids.iter().any(|c| c == &points[i])))
            .unwrap_or(0);
        centroids.push(points[next].clone());
        for (d, z) in d2.iter_mut().zip(points) {
            *d = d.min(distance(z, &points[next]));
        }
    }
    centroids
}

/// Clusters `points` into `k` groups.
pub fn weighted_kmeans(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::BudgetExceedsPool { budget: k, pool: n });
    }
    if weights.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: weights.len() });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(invalid("k-means weights must be positive and finite"));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
    }
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, &weights, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut objective = f64::INFINITY;
    let mut iterations = 0;
    let mut reseeded = 0;
    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let nearest = assign(points, &centroids);
        let new_assign: Vec<usize> = nearest.iter().map(|a| a.0).collect();
        let new_objective: f64 = nearest.iter().zip(&weights).map(|(a, w)| a.1 * w).sum();
        let changed = new_assign != assignments;
        assignments = new_assign;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut mass = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for ((z, &a), &w) in points.iter().zip(&assignments).zip(&weights) {
            for (s, v) in sums[a].iter_mut().zip(z) {
                *s += w * v;
            }
            mass[a] += w;
            counts[a] += 1;
        }
        let mut any_empty = false;
        for j in 0..k {
            if counts[j] == 0 {
                any_empty = true;
                // Farthest point from its own centroid, among clusters that
                // keep at least one member after the move.
                let donor = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| nearest[a].1.total_cmp(&nearest[b].1).then(b.cmp(&a)));
                if let Some(i) = donor {
                    log::warn!("k-means cluster {j} empty at iteration {iter}; re-seeded from point {i}");
                    counts[assignments[i]] -= 1;
                    let wi = weights[i];
                    for (s, v) in sums[assignments[i]].iter_mut().zip(&points[i]) {
                        *s -= wi * v;
                    }
                    mass[assignments[i]] -= wi;
                    assignments[i] = j;
                    counts[j] = 1;
                    sums[j] = points[i].iter().map(|v| wi * v).collect();
                    mass[j] = wi;
                    reseeded += 1;
                }
            }
        }
        for j in 0..k {
            if mass[j] > 0.0 {
                centroids[j] = sums[j].iter().map(|s| s / mass[j]).collect();
            }
        }
        let rel_change = if objective.is_finite() {
            (objective - new_objective).abs() / objective.abs().max(f64::MIN_POSITIVE)
        } else {
            f64::INFINITY
        };
        objective = new_objective;
        if !any_empty && (!changed || rel_change < opts.tolerance) {
            break;
        }
    }
    // Final assignment against the final centroids.
    let nearest = assign(points, &centroids);
    let final_assign: Vec<usize> = nearest.iter().map(|a| a.0).collect();
    let mut counts = vec![0usize; k];
    for &a in &final_assign {
        counts[a] += 1;
    }
    if counts.iter().all(|&c| c > 0) {
        assignments = final_assign;
        objective = nearest.iter().zip(&weights).map(|(a, w)| a.1 * w).sum();
    }
    Ok(KMeansResult { centroids, assignments, objective, iterations, reseeded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        for i in 0..10 {
            let t = i as f64 * 0.01;
            pts.push(vec![t, -t]);
            pts.push(vec![100.0 + t, 50.0 + t]);
        }
        pts
    }

    #[test]
    fn separates_two_blobs() {
        let pts = blobs();
        let res = weighted_kmeans(&pts, &vec![1.0; pts.len()], 2, 3, &KMeansOptions::default()).unwrap();
        for (i, &a) in res.assignments.iter().enumerate() {
            assert_eq!(a, res.assignments[i % 2]);
        }
        assert_ne!(res.assignments[0], res.assignments[1]);
    }

    #[test]
    fn k_equal_to_n_isolates_every_point() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 10.0, (i * i) as f64]).collect();
        let res = weighted_kmeans(&pts, &[1.0; 6], 6, 0, &KMeansOptions::default()).unwrap();
        let mut seen = res.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 6);
        assert!(res.objective.abs() < 1e-20);
    }

    #[test]
    fn rejects_bad_input() {
        let pts = blobs();
        assert!(weighted_kmeans(&pts, &vec![1.0; pts.len()], 0, 0, &KMeansOptions::default()).is_err());
        assert!(matches!(
            weighted_kmeans(&pts, &vec![1.0; pts.len()], 21, 0, &KMeansOptions::default()),
            Err(Error::BudgetExceedsPool { .. })
        ));
        assert!(weighted_kmeans(&pts, &vec![0.0; pts.len()], 2, 0, &KMeansOptions::default()).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let mut pts = vec![vec![0.0, 0.0]; 8];
        pts.push(vec![1.0, 1.0]);
        pts.push(vec![2.0, 2.0]);
        let res = weighted_kmeans(&pts, &vec![1.0; pts.len()], 3, 1, &KMeansOptions::default()).unwrap();
        let mut counts = [0usize; 3];
        for &a in &res.assignments {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }
}
