use densal_core::coreset::{
    active_weights, select_active, select_active_weighted, select_manual, select_naive, weighted_kmeans, Candidate,
    CandidatePool, KMeansOptions,
};
use densal_core::geoembed::distance;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pool(seed: u64, n: usize, dim: usize, blobs: usize) -> CandidatePool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..blobs).map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
    let cands = (0..n as u64)
        .map(|id| {
            let c = &centers[id as usize % blobs];
            Candidate {
                region_id: id,
                center: (rng.random_range(0.0..5e4), rng.random_range(0.0..5e4)),
                z: c.iter().map(|x| x + rng.random_range(-1.5..1.5)).collect(),
                g: rng.random_range(0.001..0.05),
            }
        })
        .collect();
    CandidatePool::top_q(cands, n).unwrap()
}

#[test]
fn weight_rescaling_changes_nothing() {
    let budget = 12;
    for seed in 0..5 {
        let pool = random_pool(seed, 400, 6, 9);
        let w = active_weights(&pool);
        let points: Vec<Vec<f64>> = pool.candidates().iter().map(|c| c.z.clone()).collect();
        let base = weighted_kmeans(&points, &w, budget, seed, &KMeansOptions::default()).unwrap();
        let base_batch = select_active(&pool, budget, seed).unwrap();
        for c in [0.1, budget as f64, 17.3] {
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            let km = weighted_kmeans(&points, &scaled, budget, seed, &KMeansOptions::default()).unwrap();
            assert_eq!(km.assignments, base.assignments, "c = {c}");
            let batch = select_active_weighted(&pool, &scaled, budget, seed, &KMeansOptions::default()).unwrap();
            assert_eq!(batch.region_ids(), base_batch.region_ids(), "c = {c}");
        }
    }
}

#[test]
fn representatives_are_nearest_to_centroids_and_from_the_pool() {
    let pool = random_pool(7, 300, 4, 5);
    let budget = 10;
    let batch = select_active(&pool, budget, 7).unwrap();
    let km = weighted_kmeans(
        &pool.candidates().iter().map(|c| c.z.clone()).collect::<Vec<_>>(),
        &active_weights(&pool),
        budget,
        7,
        &KMeansOptions::default(),
    )
    .unwrap();
    let mut clusters: Vec<usize> = batch.entries.iter().map(|e| e.cluster_id).collect();
    clusters.sort_unstable();
    clusters.dedup();
    assert_eq!(clusters.len(), batch.len());
    for e in &batch.entries {
        let members: Vec<&Candidate> =
            pool.candidates().iter().zip(&km.assignments).filter(|(_, &a)| a == e.cluster_id).map(|(c, _)| c).collect();
        let best = members.iter().map(|c| distance(&c.z, &km.centroids[e.cluster_id])).fold(f64::INFINITY, f64::min);
        assert_eq!(e.distance, best);
        assert!(members.iter().any(|c| c.region_id == e.region_id));
    }
    assert_eq!(select_active(&pool, budget, 7).unwrap(), batch);
}

#[test]
fn representatives_respect_the_diversity_floor() {
    for (seed, blobs, budget) in [(1, 6, 6), (2, 8, 8), (3, 1, 5), (4, 20, 10)] {
        let pool = random_pool(seed, 500, 3, blobs);
        let points: Vec<Vec<f64>> = pool.candidates().iter().map(|c| c.z.clone()).collect();
        let km = weighted_kmeans(&points, &active_weights(&pool), budget, seed, &KMeansOptions::default()).unwrap();
        let batch = select_active(&pool, budget, seed).unwrap();
        let radius: Vec<f64> = (0..budget)
            .map(|j| {
                let d: Vec<f64> = points
                    .iter()
                    .zip(&km.assignments)
                    .filter(|(_, &a)| a == j)
                    .map(|(p, _)| distance(p, &km.centroids[j]).sqrt())
                    .collect();
                d.iter().sum::<f64>() / d.len() as f64
            })
            .collect();
        let z = |id: u64| &pool.candidates().iter().find(|c| c.region_id == id).unwrap().z;
        for (i, a) in batch.entries.iter().enumerate() {
            for b in &batch.entries[i + 1..] {
                let sep = distance(z(a.region_id), z(b.region_id)).sqrt();
                let floor = radius[a.cluster_id].min(radius[b.cluster_id]);
                assert!(sep > floor, "seed {seed}: clusters {} and {} at {sep} within radius {floor}", a.cluster_id, b.cluster_id);
            }
        }
    }
}

fn diameter(points: &[(f64, f64)]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
        }
    }
    best
}

#[test]
fn naive_batches_are_spatially_compact() {
    let pool = random_pool(11, 400, 2, 1);
    let regions = pool.candidates();
    let budget = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut compact = 0;
    for seed in 0..100 {
        let batch = select_naive(regions, budget, seed).unwrap();
        assert_eq!(batch, select_naive(regions, budget, seed).unwrap());
        let chosen: Vec<(f64, f64)> = batch.entries.iter().map(|e| e.center).collect();
        let random: Vec<(f64, f64)> = sample(&mut rng, regions.len(), budget).into_iter().map(|i| regions[i].center).collect();
        if diameter(&chosen) <= diameter(&random) {
            compact += 1;
        }
    }
    assert!(compact >= 95, "{compact}/100");
}

#[test]
fn manual_draws_are_uniform() {
    let curated: Vec<Candidate> =
        (0..20).map(|id| Candidate { region_id: id, center: (0.0, 0.0), z: vec![], g: 0.0 }).collect();
    let (draws, budget) = (10_000, 3);
    let mut counts = [0usize; 20];
    for seed in 0..draws {
        let batch = select_manual(&curated, budget, seed).unwrap();
        let mut ids = batch.region_ids();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), budget);
        for id in ids {
            counts[id as usize] += 1;
        }
    }
    let p = budget as f64 / 20.0;
    let expected = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (id, &c) in counts.iter().enumerate() {
        assert!((c as f64 - expected).abs() <= 3.0 * sigma, "region {id}: {c} draws, expected {expected} ± {}", 3.0 * sigma);
    }
}
