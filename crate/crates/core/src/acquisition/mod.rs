//! Shard-parallel acquisition scoring in two passes: per-region sufficient
//! statistics, a global reduction, and the normalized uncertainty plus
//! diversity score of every region.

mod engine;
mod field;
mod reduce;
mod score;
mod stats;
mod sum;

pub use engine::{partition_round_robin, run_two_phase, AcquisitionOutcome};
pub use field::{region_center, PixelField, ScoringEnsemble};
pub use reduce::{global_reduce, region_distance, GlobalStats};
pub use score::{read_scores_csv, score, write_scores_csv, AcquisitionScore};
pub use stats::{
    accumulate_stats, read_stats_jsonl, region_stats, tile_regions, write_stats_jsonl, Region, RegionStats,
    DEFAULT_REGION_SIDE,
};
pub use sum::{compensated_sum, CompensatedSum};
