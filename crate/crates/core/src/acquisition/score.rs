use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::reduce::{canonical_order, region_distance, GlobalStats};
use super::stats::RegionStats;
use crate::error::Result;

/// Normalized acquisition score of one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub region_id: u64,
    pub uncertainty_term: f64,
    pub diversity_term: f64,
    pub g: f64,
}

/// `g(q) = s_q / Σs + D_q / Σd²` for every region, ordered by region id.
/// A zero denominator makes that term uniform (`1 / |Q|`).
pub fn score(stats: &[RegionStats], globals: &GlobalStats) -> Result<Vec<AcquisitionScore>> {
    let sorted = canonical_order(stats)?;
    let uniform = 1.0 / sorted.len().max(1) as f64;
    if globals.sum_s <= 0.0 {
        log::warn!("total uncertainty is zero (degenerate ensemble); using a uniform uncertainty term");
    }
    if globals.sum_d2 <= 0.0 {
        log::warn!("total embedding spread is zero; using a uniform diversity term");
    }
    Ok(sorted
        .into_iter()
        .map(|s| {
            let uncertainty_term = if globals.sum_s > 0.0 { s.s / globals.sum_s } else { uniform };
            let diversity_term = if globals.sum_d2 > 0.0 {
                region_distance(s, &globals.mu) / globals.sum_d2
            } else {
                uniform
            };
            AcquisitionScore {
                region_id: s.region_id,
                uncertainty_term,
                diversity_term,
                g: uncertainty_term + diversity_term,
            }
        })
        .collect())
}

/// CSV with header `region_id,uncertainty_term,diversity_term,g`.
pub fn write_scores_csv<W: Write>(w: W, scores: &[AcquisitionScore]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for s in scores {
        wtr.serialize(s)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(r: R) -> Result<Vec<AcquisitionScore>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|rec| rec.map_err(Into::into)).collect()
}
