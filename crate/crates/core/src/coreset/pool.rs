use std::collections::HashMap;

use crate::acquisition::AcquisitionScore;
use crate::error::{invalid, Result};
use crate::geoembed::FusedEmbedding;

pub const DEFAULT_POOL_SIZE: usize = 100_000;
pub const DEFAULT_BUDGET: usize = 50;

/// A region eligible for selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub region_id: u64,
    pub center: (f64, f64),
    pub z: Vec<f64>,
    pub g: f64,
}

impl Candidate {
    pub fn new(embedding: FusedEmbedding, g: f64) -> Self {
        Self { region_id: embedding.region_id, center: embedding.center, z: embedding.z, g }
    }
}

/// The `q` highest-scoring candidates, sorted by descending `g`
/// (ties by ascending region id).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    q: usize,
    candidates: Vec<Candidate>,
}

impl CandidatePool {
    pub fn top_q(mut candidates: Vec<Candidate>, q: usize) -> Result<Self> {
        if q == 0 {
            return Err(invalid("pool size q must be at least 1"));
        }
        if let Some(c) = candidates.iter().find(|c| !c.g.is_finite() || c.g < 0.0) {
            return Err(invalid(format!("region {} has invalid score {}", c.region_id, c.g)));
        }
        candidates.sort_by(|a, b| b.g.total_cmp(&a.g).then(a.region_id.cmp(&b.region_id)));
        candidates.truncate(q);
        Ok(Self { q, candidates })
    }

    /// Joins embeddings with their scores by region id. Regions missing
    /// from either side are skipped.
    pub fn from_scores(embeddings: Vec<FusedEmbedding>, scores: &[AcquisitionScore], q: usize) -> Result<Self> {
        let g: HashMap<u64, f64> = scores.iter().map(|s| (s.region_id, s.g)).collect();
        let candidates = embeddings
            .into_iter()
            .filter_map(|e| g.get(&e.region_id).map(|&g| Candidate::new(e, g)))
            .collect();
        Self::top_q(candidates, q)
    }

    /// Configured pool size; the k-means weight normalizer.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: u64, g: f64) -> Candidate {
        Candidate { region_id: id, center: (0.0, 0.0), z: vec![id as f64], g }
    }

    #[test]
    fn keeps_top_q_sorted() {
        let pool = CandidatePool::top_q(vec![cand(1, 0.1), cand(2, 0.5), cand(3, 0.5), cand(4, 0.3)], 3).unwrap();
        let ids: Vec<u64> = pool.candidates().iter().map(|c| c.region_id).collect();
        assert_eq!(ids, vec![2, 3, 4]);
        assert_eq!(pool.q(), 3);
        let small = CandidatePool::top_q(vec![cand(1, 0.1)], 10).unwrap();
        assert_eq!(small.len(), 1);
    }

    #[test]
    fn rejects_negative_score() {
        assert!(CandidatePool::top_q(vec![cand(1, -0.1)], 3).is_err());
        assert!(CandidatePool::top_q(vec![cand(1, 0.1)], 0).is_err());
    }
}
