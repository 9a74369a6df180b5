use rayon::prelude::*;

use super::reduce::{global_reduce, GlobalStats};
use super::score::{score, AcquisitionScore};
use super::stats::RegionStats;
use crate::error::Result;

/// Output of the two-phase acquisition computation.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionOutcome {
    pub stats: Vec<RegionStats>,
    pub globals: GlobalStats,
    pub scores: Vec<AcquisitionScore>,
}

/// Runs phase 1 (`region_stats`) on every shard in parallel, then the
/// global reduction barrier, then scoring. Shards share no mutable state.
pub fn run_two_phase<S, F>(shards: &[S], phase1: F) -> Result<AcquisitionOutcome>
where
    S: Sync,
    F: Fn(&S) -> Result<Vec<RegionStats>> + Sync,
{
    let per_shard: Vec<Vec<RegionStats>> = shards.par_iter().map(&phase1).collect::<Result<_>>()?;
    let mut stats: Vec<RegionStats> = per_shard.into_iter().flatten().collect();
    stats.sort_by_key(|s| s.region_id);
    let globals = global_reduce(&stats)?;
    let scores = score(&stats, &globals)?;
    Ok(AcquisitionOutcome { stats, globals, scores })
}

/// Deals `items` round-robin into `shards` groups.
pub fn partition_round_robin<T: Clone>(items: &[T], shards: usize) -> Vec<Vec<T>> {
    let shards = shards.max(1);
    let mut out = vec![Vec::new(); shards];
    for (i, item) in items.iter().enumerate() {
        out[i % shards].push(item.clone());
    }
    out
}
