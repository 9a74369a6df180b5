//! Seeded fixtures shared by the benchmarks.

use densal_core::acquisition::{accumulate_stats, RegionStats};
use densal_core::coreset::Candidate;
use densal_core::raster::{Bounds, TreeAnnotationSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `regions` regions of `pixels` random `dim`-wide embeddings each.
pub fn random_region_stats(regions: usize, pixels: usize, dim: usize, seed: u64) -> Vec<RegionStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = vec![0.0; pixels * dim];
    let mut s = vec![0.0; pixels];
    (0..regions as u64)
        .map(|id| {
            z.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            s.iter_mut().for_each(|v| *v = rng.random_range(0.0..0.1));
            let px = z.chunks(dim).zip(s.iter().copied());
            accumulate_stats(id, (id % 16) as u32, dim, px).expect("regions have pixels")
        })
        .collect()
}

/// Candidates drawn from `clusters` Gaussian-ish blobs with positive scores.
pub fn random_candidates(n: usize, dim: usize, clusters: usize, seed: u64) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    (0..n as u64)
        .map(|id| {
            let c = &centers[id as usize % clusters];
            Candidate {
                region_id: id,
                center: (rng.random_range(0.0..1e4), rng.random_range(0.0..1e4)),
                z: c.iter().map(|x| x + rng.random_range(-0.5..0.5)).collect(),
                g: rng.random_range(1e-4..1e-2),
            }
        })
        .collect()
}

/// `n` trees uniformly inside `[0, side_m]²`, away from the border.
pub fn random_trees(n: usize, side_m: f64, seed: u64) -> TreeAnnotationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 15.0;
    let pts = (0..n).map(|_| (rng.random_range(m..side_m - m), rng.random_range(m..side_m - m))).collect();
    TreeAnnotationSet::new("bench", Bounds { min_x: 0.0, min_y: 0.0, max_x: side_m, max_y: side_m }, pts)
        .expect("points are inside the bounds")
}
