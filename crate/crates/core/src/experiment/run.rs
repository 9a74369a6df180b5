use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{generate_corpus, mix_seed, split_corpus, Corpus, CorpusBlock, CorpusConfig, CorpusSplit};
use super::metrics::{calibration_curve, evaluate_mae, percentile_grid, CalibrationPoint};
use crate::acquisition::{global_reduce, region_stats, score, AcquisitionScore, GlobalStats, Region, RegionStats, ScoringEnsemble};
use crate::coreset::{select_active, select_manual, select_naive, select_top, Candidate, CandidatePool, Strategy, DEFAULT_POOL_SIZE};
use crate::error::{invalid, Error, Result};
use crate::geoembed::{AttentionTrainConfig, LocationEncoder, LocationEncoderSpec};
use crate::model::{
    predict_uncertainty, train_ensemble, train_ensemble_with_seeds, LabelledPatch, ModelSpec, TrainConfig, TrainedModel,
    UncertaintyMode,
};
use crate::raster::RasterGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub train_blocks: usize,
    pub validation_blocks: usize,
    /// Annotation budgets in blocks, ascending.
    pub budgets: Vec<usize>,
    pub strategies: Vec<Strategy>,
    /// Ensemble size used for scoring and calibration.
    pub ensemble_size: usize,
    /// Models averaged when evaluating a retrained cell.
    pub eval_members: usize,
    /// Repetitions of the stochastic strategies.
    pub repetitions: usize,
    pub model: ModelSpec,
    pub training: TrainConfig,
    pub attention: AttentionTrainConfig,
    pub encoder: LocationEncoderSpec,
    /// Candidate pool size `q`.
    pub pool_size: usize,
    /// Pools smaller than this take the top-B regions directly instead of
    /// clustering.
    pub kmeans_min_pool: usize,
    pub percentile_step: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            corpus: CorpusConfig::default(),
            train_blocks: 10,
            validation_blocks: 20,
            budgets: vec![5, 10, 15],
            strategies: vec![Strategy::Active, Strategy::Naive, Strategy::Manual],
            ensemble_size: 5,
            eval_members: 3,
            repetitions: 5,
            model: ModelSpec { hidden: vec![32, 32], ..ModelSpec::default() },
            training: TrainConfig {
                learning_rate: 3e-3,
                batch_size: 128,
                epochs: 40,
                seed: 0,
                samples_per_epoch: Some(4096),
                final_lr_fraction: 0.05,
            },
            attention: AttentionTrainConfig { max_samples: 4096, ..AttentionTrainConfig::default() },
            encoder: LocationEncoderSpec { scales: 8, ..LocationEncoderSpec::default() },
            pool_size: DEFAULT_POOL_SIZE,
            kmeans_min_pool: 1000,
            percentile_step: 10.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.encoder.validate()?;
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("budgets must be strictly ascending"));
        }
        let pool = self.corpus.blocks.saturating_sub(self.train_blocks + self.validation_blocks);
        if let Some(&b) = self.budgets.last() {
            if b > pool {
                return Err(Error::BudgetExceedsPool { budget: b, pool });
            }
        }
        if self.ensemble_size == 0 || self.eval_members == 0 || self.repetitions == 0 {
            return Err(invalid("ensemble_size, eval_members and repetitions must be at least 1"));
        }
        if self.model.bands != self.corpus_bands() {
            return Err(Error::BandMismatch { expected: self.corpus_bands(), got: self.model.bands });
        }
        if !(self.percentile_step > 0.0 && self.percentile_step <= 100.0) {
            return Err(invalid("percentile_step must lie in (0, 100]"));
        }
        Ok(())
    }

    fn corpus_bands(&self) -> usize {
        crate::raster::SpectralModel::default().bands()
    }

    /// Pixels per side of a one-hectare evaluation block.
    pub fn hectare_side(&self) -> usize {
        (100.0 / self.corpus.pixel_size).round().max(1.0) as usize
    }
}

/// Produces a density raster for a block.
pub trait BlockPredictor: Sync {
    fn predict_density(&self, block: &CorpusBlock) -> Result<RasterGrid>;
}

/// Density is clamped at zero; counts cannot be negative.
impl BlockPredictor for TrainedModel {
    fn predict_density(&self, block: &CorpusBlock) -> Result<RasterGrid> {
        let mut d = self.predict(&block.image)?.0;
        d.band_mut(0).iter_mut().filter(|v| **v < 0.0).for_each(|v| *v = 0.0);
        Ok(d)
    }
}

/// Mean density of several models.
impl BlockPredictor for [TrainedModel] {
    fn predict_density(&self, block: &CorpusBlock) -> Result<RasterGrid> {
        let first = self.first().ok_or_else(|| invalid("no models to average"))?;
        let mut acc = first.predict_density(block)?;
        for m in &self[1..] {
            let d = m.predict_density(block)?;
            for (a, v) in acc.band_mut(0).iter_mut().zip(d.band(0)) {
                *a += v;
            }
        }
        let t = self.len() as f64;
        acc.band_mut(0).iter_mut().for_each(|a| *a /= t);
        Ok(acc)
    }
}

/// Predicts the ground truth itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruthPredictor;

impl BlockPredictor for TruthPredictor {
    fn predict_density(&self, block: &CorpusBlock) -> Result<RasterGrid> {
        Ok(block.density.clone())
    }
}

/// Pixel-level and one-hectare MAE over a set of blocks, trees/ha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEval {
    pub pixel_mae: f64,
    pub hectare_mae: f64,
}

pub fn evaluate_predictor<P: BlockPredictor + ?Sized>(predictor: &P, blocks: &[&CorpusBlock], hectare_side: usize) -> Result<BlockEval> {
    if blocks.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut pixel = 0.0;
    let mut hectare = 0.0;
    for b in blocks {
        let pred = predictor.predict_density(b)?;
        pixel += evaluate_mae(&pred, &b.density, 1)?;
        hectare += evaluate_mae(&pred, &b.density, hectare_side)?;
    }
    let n = blocks.len() as f64;
    Ok(BlockEval { pixel_mae: pixel / n, hectare_mae: hectare / n })
}

/// Acquisition scores of `blocks`, one region per block.
#[derive(Debug, Clone)]
pub struct BlockScores {
    pub stats: Vec<RegionStats>,
    pub globals: GlobalStats,
    pub scores: Vec<AcquisitionScore>,
    pub candidates: Vec<Candidate>,
}

pub fn block_region(block: &CorpusBlock) -> Region {
    Region { region_id: block.id, shard_id: 0, row: 0, col: 0, side: block.image.width().max(block.image.height()) }
}

pub fn block_stats(ensemble: &ScoringEnsemble, block: &CorpusBlock) -> Result<Option<RegionStats>> {
    let field = ensemble.pixel_field(&block.image, None)?;
    Ok(region_stats(&block_region(block), &field))
}

pub fn score_blocks(ensemble: &ScoringEnsemble, blocks: &[&CorpusBlock]) -> Result<BlockScores> {
    let stats: Vec<RegionStats> = blocks
        .par_iter()
        .map(|b| block_stats(ensemble, b))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let globals = global_reduce(&stats)?;
    let scores = score(&stats, &globals)?;
    let candidates = stats
        .iter()
        .zip(&scores)
        .map(|(s, g)| {
            debug_assert_eq!(s.region_id, g.region_id);
            let center = blocks.iter().find(|b| b.id == s.region_id).map(|b| b.center()).unwrap_or_default();
            Candidate { region_id: s.region_id, center, z: s.mean_embedding(), g: g.g }
        })
        .collect();
    Ok(BlockScores { stats, globals, scores, candidates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub strategy: Strategy,
    pub budget: usize,
    pub repetition: usize,
    pub selected: Vec<u64>,
    pub pixel_mae: f64,
    pub hectare_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub budget: usize,
    pub runs: usize,
    pub pixel_mae_mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub pixel_mae_std: f64,
    pub hectare_mae_mean: f64,
    pub hectare_mae_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ensemble: Vec<CalibrationPoint>,
    pub mc_dropout: Vec<CalibrationPoint>,
    /// Fraction of grid points where the ensemble retains no more error
    /// than MC-dropout.
    pub ensemble_dominance: f64,
}

impl CalibrationReport {
    pub fn new(ensemble: Vec<CalibrationPoint>, mc_dropout: Vec<CalibrationPoint>) -> Self {
        let wins = ensemble.iter().zip(&mc_dropout).filter(|(e, d)| e.retained_mse <= d.retained_mse).count();
        let ensemble_dominance = wins as f64 / ensemble.len().max(1) as f64;
        Self { ensemble, mc_dropout, ensemble_dominance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub split: CorpusSplit,
    pub base: BlockEval,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
    pub calibration: Option<CalibrationReport>,
}

impl EvalReport {
    pub fn summary_row(&self, strategy: Strategy, budget: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.strategy == strategy && r.budget == budget)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

/// Groups cells by (strategy, budget) in first-seen order. The base
/// evaluation appears as budget 0 for every strategy present.
pub fn summarize(base: &BlockEval, cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Strategy, usize)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.strategy, 0)) {
            keys.push((c.strategy, 0));
        }
        if !keys.contains(&(c.strategy, c.budget)) {
            keys.push((c.strategy, c.budget));
        }
    }
    keys.into_iter()
        .map(|(strategy, budget)| {
            let (pix, ha): (Vec<f64>, Vec<f64>) = if budget == 0 {
                (vec![base.pixel_mae], vec![base.hectare_mae])
            } else {
                cells.iter().filter(|c| c.strategy == strategy && c.budget == budget).map(|c| (c.pixel_mae, c.hectare_mae)).unzip()
            };
            let (pm, ps) = mean_std(&pix);
            let (hm, hs) = mean_std(&ha);
            SummaryRow { strategy, budget, runs: pix.len(), pixel_mae_mean: pm, pixel_mae_std: ps, hectare_mae_mean: hm, hectare_mae_std: hs }
        })
        .collect()
}

/// Explicit-ensemble and MC-dropout calibration curves over the pixels of
/// `blocks`. MC-dropout runs the first member `members.len()` times.
pub fn calibration_study(members: &[TrainedModel], blocks: &[&CorpusBlock], percentiles: &[f64], seed: u64) -> Result<CalibrationReport> {
    let t = members.len();
    let mut ens_u = Vec::new();
    let mut ens_e = Vec::new();
    let mut mc_u = Vec::new();
    let mut mc_e = Vec::new();
    for b in blocks {
        let truth = b.density.band(0);
        let ens = predict_uncertainty(members, &b.image, UncertaintyMode::Ensemble, t, 0)?;
        let mc = predict_uncertainty(&members[..1], &b.image, UncertaintyMode::McDropout, t, mix_seed(seed, b.id))?;
        for (i, &y) in truth.iter().enumerate() {
            ens_u.push(ens.variance[i]);
            ens_e.push((ens.mean[i] - y).powi(2));
            mc_u.push(mc.variance[i]);
            mc_e.push((mc.mean[i] - y).powi(2));
        }
    }
    Ok(CalibrationReport::new(calibration_curve(&ens_u, &ens_e, percentiles)?, calibration_curve(&mc_u, &mc_e, percentiles)?))
}

fn patches_for(corpus: &Corpus, ids: &[u64]) -> Result<Vec<LabelledPatch>> {
    ids.iter()
        .map(|&id| corpus.block(id).ok_or_else(|| invalid(format!("unknown block {id}")))?.labelled())
        .collect()
}

fn blocks_for<'a>(corpus: &'a Corpus, ids: &[u64]) -> Vec<&'a CorpusBlock> {
    ids.iter().filter_map(|&id| corpus.block(id)).collect()
}

fn strategy_tag(s: Strategy) -> u64 {
    match s {
        Strategy::Active => 1,
        Strategy::Naive => 2,
        Strategy::Manual => 3,
    }
}

/// Shared state of one experiment run after base training and scoring.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub corpus: Corpus,
    pub split: CorpusSplit,
    pub base_members: Vec<TrainedModel>,
    pub scores: BlockScores,
}

impl Experiment {
    /// Generates the corpus, trains the base ensemble on the training split
    /// and scores the pool.
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let corpus = generate_corpus(&cfg.corpus)?;
        let split = split_corpus(cfg.corpus.blocks, cfg.train_blocks, cfg.validation_blocks, cfg.seed)?;
        let train = patches_for(&corpus, &split.train)?;
        let tcfg = TrainConfig { seed: mix_seed(cfg.seed, 0xBA5E), ..cfg.training.clone() };
        let base_members = train_ensemble(&train, &cfg.model, &tcfg, cfg.ensemble_size)?;
        let encoder = LocationEncoder::new(cfg.encoder.clone())?;
        let acfg = AttentionTrainConfig { seed: mix_seed(cfg.seed, 0xA77E), ..cfg.attention.clone() };
        let ensemble = ScoringEnsemble::fit(base_members.clone(), encoder, &train, &acfg)?;
        let scores = score_blocks(&ensemble, &blocks_for(&corpus, &split.pool))?;
        Ok(Self { config: cfg.clone(), corpus, split, base_members, scores })
    }

    fn pool(&self) -> Result<CandidatePool> {
        CandidatePool::top_q(self.scores.candidates.clone(), self.config.pool_size)
    }

    /// Blocks chosen by `strategy` at `budget` in repetition `rep`.
    pub fn select(&self, strategy: Strategy, budget: usize, rep: usize) -> Result<Vec<u64>> {
        let seed = mix_seed(self.config.seed, strategy_tag(strategy) << 32 | rep as u64);
        let batch = match strategy {
            Strategy::Active => {
                let pool = self.pool()?;
                if pool.len() < self.config.kmeans_min_pool {
                    select_top(&pool, budget)?
                } else {
                    select_active(&pool, budget, seed)?
                }
            }
            Strategy::Naive => select_naive(&self.scores.candidates, budget, seed)?,
            Strategy::Manual => {
                let curated: Vec<Candidate> = self
                    .scores
                    .candidates
                    .iter()
                    .filter(|c| self.corpus.block(c.region_id).is_some_and(CorpusBlock::has_plantation))
                    .cloned()
                    .collect();
                select_manual(&curated, budget, seed)?
            }
        };
        Ok(batch.region_ids())
    }

    /// Trains on the training split plus `extra` blocks from scratch and
    /// evaluates on the validation split.
    pub fn train_and_evaluate(&self, extra: &[u64]) -> Result<BlockEval> {
        let mut ids = self.split.train.clone();
        ids.extend_from_slice(extra);
        let patches = patches_for(&self.corpus, &ids)?;
        let seeds: Vec<u64> = (0..self.config.eval_members).map(|i| mix_seed(self.config.seed, 0xE7A1_0000 + i as u64)).collect();
        let models = train_ensemble_with_seeds(&patches, &self.config.model, &self.config.training, &seeds)?;
        evaluate_predictor(&models[..], &blocks_for(&self.corpus, &self.split.validation), self.config.hectare_side())
    }

    pub fn calibration(&self) -> Result<CalibrationReport> {
        calibration_study(
            &self.base_members,
            &blocks_for(&self.corpus, &self.split.validation),
            &percentile_grid(self.config.percentile_step),
            mix_seed(self.config.seed, 0xCA11),
        )
    }

    /// Runs every (strategy, budget, repetition) cell in parallel.
    pub fn run(&self) -> Result<EvalReport> {
        let cfg = &self.config;
        let mut jobs = Vec::new();
        for &budget in &cfg.budgets {
            for &strategy in &cfg.strategies {
                let reps = if strategy == Strategy::Active { 1 } else { cfg.repetitions };
                jobs.extend((0..reps).map(|rep| (strategy, budget, rep)));
            }
        }
        let base = self.train_and_evaluate(&[]);
        let cells: Vec<CellResult> = jobs
            .par_iter()
            .map(|&(strategy, budget, repetition)| {
                let selected = if budget == 0 { Vec::new() } else { self.select(strategy, budget, repetition)? };
                log::info!("cell {strategy} B={budget} rep={repetition}: training on {} extra blocks", selected.len());
                let eval = self.train_and_evaluate(&selected)?;
                Ok(CellResult { strategy, budget, repetition, selected, pixel_mae: eval.pixel_mae, hectare_mae: eval.hectare_mae })
            })
            .collect::<Result<_>>()?;
        let base = base?;
        let calibration = Some(self.calibration()?);
        Ok(EvalReport {
            config: cfg.clone(),
            split: self.split.clone(),
            base,
            summary: summarize(&base, &cells),
            cells,
            calibration,
        })
    }
}

/// Full strategy sweep: corpus, base ensemble, scoring, retraining per cell
/// and the calibration study. Deterministic in `cfg`.
pub fn run_al_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    Experiment::prepare(cfg)?.run()
}
