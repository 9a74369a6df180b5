//! Batch construction from scored regions: weighted k-means over the top-q
//! pool for active selection, plus the spatial-cluster and curated-list
//! baselines.

mod io;
mod kmeans;
mod pool;
mod select;

pub use io::{format_summary, read_selection_jsonl, selection_records, write_selection_jsonl, SelectionRecord};
pub use kmeans::{weighted_kmeans, KMeansOptions, KMeansResult};
pub use pool::{Candidate, CandidatePool, DEFAULT_BUDGET, DEFAULT_POOL_SIZE};
pub use select::{
    active_weights, allocate_by_strip, select_active, select_active_weighted, select_manual, select_naive, select_top,
    Alternate, SelectionBatch, SelectionEntry, Strategy,
};
