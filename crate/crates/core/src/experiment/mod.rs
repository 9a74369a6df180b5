//! Desk-scale strategy comparison on a fully labelled synthetic corpus:
//! the active learning sweep, MAE at pixel and hectare aggregation, and
//! uncertainty calibration curves.

mod corpus;
mod metrics;
mod report;
mod run;

pub use corpus::{generate_corpus, mix_seed, split_corpus, Corpus, CorpusBlock, CorpusConfig, CorpusSplit, DomainProfile};
pub use metrics::{calibration_curve, evaluate_mae, percentile_grid, CalibrationPoint};
pub use report::{read_report_json, read_summary_csv, write_calibration_csv, write_report_json, write_summary_csv, CalibrationRow};
pub use run::{
    block_region, block_stats, calibration_study, evaluate_predictor, run_al_experiment, score_blocks, summarize, BlockEval,
    BlockPredictor, BlockScores, CalibrationReport, CellResult, EvalReport, Experiment, ExperimentConfig, SummaryRow,
    TruthPredictor,
};
