use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use densal_core::coreset::{KMeansOptions, DEFAULT_BUDGET, DEFAULT_POOL_SIZE};
use densal_core::experiment::{CorpusConfig, ExperimentConfig};
use densal_core::geoembed::{AttentionTrainConfig, LocationEncoderSpec};
use densal_core::model::{ModelSpec, TrainConfig, DEFAULT_ENSEMBLE_SIZE};
use serde::{Deserialize, Serialize};

use crate::failure::ConfigError;

/// Everything a pipeline run needs. Every key is optional in the TOML file;
/// missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every artifact the commands read and write.
    pub work_dir: PathBuf,
    /// Master seed for training, attention fitting, selection and evaluation.
    pub seed: u64,
    /// Number of pool shards written by `generate`.
    pub shards: usize,
    pub train_blocks: usize,
    pub validation_blocks: usize,
    /// Region side in pixels.
    pub region_side: usize,
    /// Candidate pool size `q`.
    pub pool_size: usize,
    /// Annotation budget `B`.
    pub budget: usize,
    pub ensemble_size: usize,
    /// Pixels with a higher cloud probability are ignored when scoring.
    pub max_cloud_prob: f64,
    /// Pixels with a higher cloud probability are masked for training.
    pub train_max_cloud_prob: f64,
    /// Spacing of the calibration percentile grid.
    pub percentile_step: f64,
    pub corpus: CorpusConfig,
    pub model: ModelSpec,
    pub training: TrainConfig,
    pub attention: AttentionTrainConfig,
    pub encoder: LocationEncoderSpec,
    pub kmeans: KMeansOptions,
    /// Settings of the strategy comparison run by `bench`.
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        Self {
            work_dir: PathBuf::from("densal-run"),
            seed: exp.seed,
            shards: 4,
            train_blocks: exp.train_blocks,
            validation_blocks: exp.validation_blocks,
            region_side: 20,
            pool_size: DEFAULT_POOL_SIZE,
            budget: DEFAULT_BUDGET,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            max_cloud_prob: densal_core::raster::INFERENCE_MAX_CLOUD_PROB,
            train_max_cloud_prob: densal_core::raster::TRAIN_MAX_CLOUD_PROB,
            percentile_step: exp.percentile_step,
            corpus: exp.corpus.clone(),
            model: exp.model.clone(),
            training: exp.training.clone(),
            attention: exp.attention.clone(),
            encoder: exp.encoder.clone(),
            kmeans: KMeansOptions::default(),
            experiment: exp,
        }
    }
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError(msg.to_string()).into())
    }
}

fn nested(r: densal_core::Result<()>, section: &str) -> Result<()> {
    r.map_err(|e| ConfigError(format!("[{section}] {e}")).into())
}

impl RunConfig {
    /// Reads a TOML file. Unknown keys and out-of-range values are
    /// configuration errors.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.shards >= 1, "shards must be at least 1")?;
        check(self.train_blocks >= 1, "train_blocks must be at least 1")?;
        check(self.validation_blocks >= 1, "validation_blocks must be at least 1")?;
        check(
            self.train_blocks + self.validation_blocks < self.corpus.blocks,
            "train_blocks + validation_blocks must leave at least one pool block",
        )?;
        check(
            self.region_side >= 1 && self.region_side <= self.corpus.block_side,
            "region_side must lie in [1, corpus.block_side]",
        )?;
        check(self.pool_size >= 1, "pool_size must be at least 1")?;
        check(self.budget >= 1, "budget must be at least 1")?;
        check(self.ensemble_size >= 1, "ensemble_size must be at least 1")?;
        check((0.0..=1.0).contains(&self.max_cloud_prob), "max_cloud_prob must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.train_max_cloud_prob), "train_max_cloud_prob must lie in [0, 1]")?;
        check(
            self.percentile_step > 0.0 && self.percentile_step <= 100.0,
            "percentile_step must lie in (0, 100]",
        )?;
        check(self.kmeans.max_iter >= 1, "kmeans.max_iter must be at least 1")?;
        check(self.kmeans.tolerance >= 0.0, "kmeans.tolerance must be non-negative")?;
        nested(self.corpus.validate(), "corpus")?;
        nested(self.model.validate(), "model")?;
        nested(self.training.validate(), "training")?;
        nested(self.encoder.validate(), "encoder")?;
        nested(self.experiment.validate(), "experiment")?;
        Ok(())
    }

    /// Applies command-line overrides. `--seed` replaces every seed.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) {
        if let Some(s) = seed {
            self.seed = s;
            self.corpus.seed = s;
            self.experiment.seed = s;
        }
        if let Some(o) = out {
            self.work_dir = o;
        }
    }

    pub fn regions_per_block(&self) -> u64 {
        let per_side = (self.corpus.block_side / self.region_side) as u64;
        per_side * per_side
    }

    pub fn hectare_side(&self) -> usize {
        (100.0 / self.corpus.pixel_size).round().max(1.0) as usize
    }
}

pub fn resolve(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}
