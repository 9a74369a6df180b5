use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::{weighted_kmeans, KMeansOptions};
use super::pool::{Candidate, CandidatePool};
use crate::error::{invalid, Error, Result};
use crate::geoembed::distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Active,
    Naive,
    Manual,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Active => "active",
            Strategy::Naive => "naive",
            Strategy::Manual => "manual",
        })
    }
}

/// Runner-up for a cluster, offered when the primary cannot be annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct Alternate {
    pub region_id: u64,
    pub center: (f64, f64),
    pub distance: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEntry {
    pub region_id: u64,
    pub cluster_id: usize,
    pub center: (f64, f64),
    /// Squared embedding distance to the cluster centroid for active
    /// selection; planar distance to the anchor for naive selection.
    pub distance: f64,
    pub g: f64,
    pub alternate: Option<Alternate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionBatch {
    pub strategy: Strategy,
    pub entries: Vec<SelectionEntry>,
}

impl SelectionBatch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn region_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.region_id).collect()
    }
}

fn check_budget(budget: usize, pool: usize) -> Result<()> {
    if budget == 0 {
        return Err(invalid("budget must be at least 1"));
    }
    if budget > pool {
        return Err(Error::BudgetExceedsPool { budget, pool });
    }
    Ok(())
}

/// Smallest positive score used when forming `1/(q·g)`, so a zero score
/// yields a large but finite weight.
const MIN_SCORE: f64 = 1e-12;

/// Per-candidate k-means weight `1/(q·g)`.
pub fn active_weights(pool: &CandidatePool) -> Vec<f64> {
    let q = pool.q() as f64;
    pool.candidates().iter().map(|c| 1.0 / (q * c.g.max(MIN_SCORE))).collect()
}

/// Clusters the pool into `budget` groups and returns the member nearest
/// each centroid.
pub fn select_active(pool: &CandidatePool, budget: usize, seed: u64) -> Result<SelectionBatch> {
    select_active_weighted(pool, &active_weights(pool), budget, seed, &KMeansOptions::default())
}

/// [`select_active`] with explicit weights and k-means options.
pub fn select_active_weighted(
    pool: &CandidatePool,
    weights: &[f64],
    budget: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<SelectionBatch> {
    check_budget(budget, pool.len())?;
    let cands = pool.candidates();
    let points: Vec<Vec<f64>> = cands.iter().map(|c| c.z.clone()).collect();
    let km = weighted_kmeans(&points, weights, budget, seed, opts)?;
    let mut members: Vec<Vec<(f64, usize)>> = vec![Vec::new(); budget];
    for (i, &a) in km.assignments.iter().enumerate() {
        members[a].push((distance(&points[i], &km.centroids[a]), i));
    }
    let mut entries = Vec::with_capacity(budget);
    for (cluster_id, m) in members.iter_mut().enumerate() {
        if m.is_empty() {
            log::warn!("cluster {cluster_id} has no members; no representative emitted");
            continue;
        }
        m.sort_by(|a, b| a.0.total_cmp(&b.0).then(cands[a.1].region_id.cmp(&cands[b.1].region_id)));
        let (d, i) = m[0];
        let alternate = m.get(1).map(|&(d2, j)| Alternate {
            region_id: cands[j].region_id,
            center: cands[j].center,
            distance: d2,
            g: cands[j].g,
        });
        entries.push(SelectionEntry {
            region_id: cands[i].region_id,
            cluster_id,
            center: cands[i].center,
            distance: d,
            g: cands[i].g,
            alternate,
        });
    }
    Ok(SelectionBatch { strategy: Strategy::Active, entries })
}

/// The `budget` highest-scoring candidates with no clustering.
pub fn select_top(pool: &CandidatePool, budget: usize) -> Result<SelectionBatch> {
    check_budget(budget, pool.len())?;
    let entries = pool.candidates()[..budget]
        .iter()
        .enumerate()
        .map(|(i, c)| SelectionEntry {
            region_id: c.region_id,
            cluster_id: i,
            center: c.center,
            distance: 0.0,
            g: c.g,
            alternate: None,
        })
        .collect();
    Ok(SelectionBatch { strategy: Strategy::Active, entries })
}

fn planar(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// One random anchor region plus its `budget − 1` nearest neighbours by
/// planar distance.
pub fn select_naive(regions: &[Candidate], budget: usize, seed: u64) -> Result<SelectionBatch> {
    check_budget(budget, regions.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = regions[rng.random_range(0..regions.len())].center;
    let mut order: Vec<(f64, usize)> = regions.iter().enumerate().map(|(i, r)| (planar(r.center, anchor), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(regions[a.1].region_id.cmp(&regions[b.1].region_id)));
    let entries = order[..budget]
        .iter()
        .enumerate()
        .map(|(k, &(d, i))| SelectionEntry {
            region_id: regions[i].region_id,
            cluster_id: k,
            center: regions[i].center,
            distance: d,
            g: regions[i].g,
            alternate: None,
        })
        .collect();
    Ok(SelectionBatch { strategy: Strategy::Naive, entries })
}

/// Uniform sample without replacement from a curated list.
pub fn select_manual(curated: &[Candidate], budget: usize, seed: u64) -> Result<SelectionBatch> {
    check_budget(budget, curated.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = sample(&mut rng, curated.len(), budget)
        .into_iter()
        .enumerate()
        .map(|(k, i)| SelectionEntry {
            region_id: curated[i].region_id,
            cluster_id: k,
            center: curated[i].center,
            distance: 0.0,
            g: curated[i].g,
            alternate: None,
        })
        .collect();
    Ok(SelectionBatch { strategy: Strategy::Manual, entries })
}

/// Largest-remainder apportionment of `budget` across strips by area.
/// Ties in the remainder go to the earlier strip.
pub fn allocate_by_strip(budget: usize, areas: &[f64]) -> Result<Vec<usize>> {
    if areas.is_empty() {
        return Err(invalid("at least one strip is required"));
    }
    if areas.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(invalid("strip areas must be finite and non-negative"));
    }
    let total: f64 = areas.iter().sum();
    if total <= 0.0 {
        return Err(invalid("total strip area must be positive"));
    }
    let quotas: Vec<f64> = areas.iter().map(|a| a / total * budget as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(budget.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    Ok(alloc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: u64, center: (f64, f64), z: Vec<f64>, g: f64) -> Candidate {
        Candidate { region_id: id, center, z, g }
    }

    #[test]
    fn pool_of_budget_distant_points_is_returned_whole() {
        let cands: Vec<Candidate> =
            (0..5).map(|i| cand(i, (0.0, 0.0), vec![i as f64 * 100.0, (i % 2) as f64 * 37.0], 0.2)).collect();
        let pool = CandidatePool::top_q(cands, 10).unwrap();
        let batch = select_active(&pool, 5, 9).unwrap();
        let mut ids = batch.region_ids();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        let mut clusters: Vec<usize> = batch.entries.iter().map(|e| e.cluster_id).collect();
        clusters.dedup();
        assert_eq!(clusters.len(), 5);
    }

    #[test]
    fn two_blobs_yield_one_representative_each() {
        let mut cands = Vec::new();
        for i in 0..20u64 {
            let off = if i % 2 == 0 { 0.0 } else { 50.0 };
            cands.push(cand(i, (0.0, 0.0), vec![off + i as f64 * 1e-3, off], 0.5));
        }
        let pool = CandidatePool::top_q(cands, 100).unwrap();
        let batch = select_active(&pool, 2, 4).unwrap();
        let parities: Vec<u64> = batch.region_ids().iter().map(|id| id % 2).collect();
        assert!(parities.contains(&0) && parities.contains(&1));
        assert!(batch.entries.iter().all(|e| e.alternate.is_some()));
    }

    #[test]
    fn budget_validation() {
        let pool = CandidatePool::top_q(vec![cand(1, (0.0, 0.0), vec![0.0], 1.0)], 4).unwrap();
        assert!(matches!(select_active(&pool, 2, 0), Err(Error::BudgetExceedsPool { budget: 2, pool: 1 })));
        assert!(select_manual(pool.candidates(), 0, 0).is_err());
    }

    #[test]
    fn naive_single_region_and_determinism() {
        let cands: Vec<Candidate> = (0..30).map(|i| cand(i, ((i * 7 % 30) as f64, (i % 5) as f64), vec![], 0.0)).collect();
        assert_eq!(select_naive(&cands, 1, 3).unwrap().len(), 1);
        assert_eq!(select_naive(&cands, 6, 3).unwrap(), select_naive(&cands, 6, 3).unwrap());
    }

    #[test]
    fn manual_whole_list() {
        let cands: Vec<Candidate> = (0..7).map(|i| cand(i, (0.0, 0.0), vec![], 0.0)).collect();
        let mut ids = select_manual(&cands, 7, 1).unwrap().region_ids();
        ids.sort();
        assert_eq!(ids, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn strip_allocation() {
        assert_eq!(allocate_by_strip(7, &[2.5]).unwrap(), vec![7]);
        assert_eq!(allocate_by_strip(4, &[1.0, 1.0]).unwrap(), vec![2, 2]);
        assert_eq!(allocate_by_strip(5, &[3.0, 1.0, 1.0]).unwrap(), vec![3, 1, 1]);
        assert_eq!(allocate_by_strip(50, &[0.3, 0.3, 0.4]).unwrap().iter().sum::<usize>(), 50);
        assert!(allocate_by_strip(3, &[]).is_err());
        assert!(allocate_by_strip(3, &[0.0]).is_err());
    }
}
