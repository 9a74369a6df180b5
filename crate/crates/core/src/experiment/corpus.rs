//! Fully labelled synthetic corpus of square blocks grouped into
//! geographic domains with distinct spectral responses.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coreset::allocate_by_strip;
use crate::error::{invalid, Result};
use crate::model::LabelledPatch;
use crate::raster::{
    generate_synthetic_scene, Bounds, DensityKernel, GeoTransform, PlantationBlock, RasterGrid, SceneParams,
    SpectralModel, TreeAnnotationSet,
};

/// SplitMix64 finalizer over `a ⊕ b`; derives independent seed streams.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub blocks: usize,
    /// Block side in pixels.
    pub block_side: usize,
    /// Ground sampling distance, meters.
    pub pixel_size: f64,
    /// Relative share of blocks per domain; one entry per domain.
    pub domain_weights: Vec<f64>,
    /// Distance between domain centers, meters.
    pub domain_spacing: f64,
    /// Distance between neighbouring block origins within a domain, meters.
    pub block_spacing: f64,
    /// Cloud fraction per block.
    pub cloud_fraction: f64,
    pub noise_sigma: f64,
    /// Half-width of the uniform per-band offset of each domain.
    pub domain_offset: f64,
    /// Half-width of the uniform multiplier spread on density gains.
    pub gain_spread: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            blocks: 126,
            block_side: 60,
            pixel_size: 10.0,
            domain_weights: vec![0.32, 0.24, 0.16, 0.12, 0.09, 0.07],
            domain_spacing: 150_000.0,
            block_spacing: 2_000.0,
            cloud_fraction: 0.0,
            noise_sigma: 0.02,
            domain_offset: 0.2,
            gain_spread: 0.2,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(invalid("corpus needs at least one block"));
        }
        if self.block_side < crate::raster::MIN_SCENE_SIDE {
            return Err(invalid(format!("block_side must be at least {}", crate::raster::MIN_SCENE_SIDE)));
        }
        if !(self.pixel_size > 0.0) || !(self.block_spacing >= self.block_side as f64 * self.pixel_size) {
            return Err(invalid("block_spacing must be at least the block extent"));
        }
        if self.domain_weights.is_empty() || self.domain_weights.iter().any(|w| !(*w > 0.0)) {
            return Err(invalid("domain_weights must be non-empty and positive"));
        }
        if !(0.0..=1.0).contains(&self.cloud_fraction) || !(self.noise_sigma >= 0.0) {
            return Err(invalid("cloud_fraction must lie in [0, 1] and noise_sigma be non-negative"));
        }
        if !(self.domain_offset >= 0.0) || !(0.0..1.0).contains(&self.gain_spread) {
            return Err(invalid("domain_offset must be non-negative and gain_spread lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn domains(&self) -> usize {
        self.domain_weights.len()
    }
}

/// Domain-level appearance and plantation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainProfile {
    pub spectral: SpectralModel,
    pub plantation_prevalence: f64,
    pub spacing: (f64, f64),
    pub background_weights: [f64; 3],
    pub origin: (f64, f64),
}

fn domain_profile(cfg: &CorpusConfig, domain: usize) -> DomainProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xD0_0000 + domain as u64));
    let mut spectral = SpectralModel { noise_sigma: cfg.noise_sigma, ..SpectralModel::default() };
    for b in 0..spectral.bands() {
        spectral.offset[b] = cfg.domain_offset * rng.random_range(-1.0..1.0);
        spectral.density_gain[b] *= 1.0 + cfg.gain_spread * rng.random_range(-1.0..1.0);
        for r in spectral.class_response[b].iter_mut() {
            *r += rng.random_range(-0.1..0.1);
        }
    }
    let lo = rng.random_range(7.5..9.0);
    let angle = domain as f64 * std::f64::consts::TAU / cfg.domains() as f64;
    DomainProfile {
        spectral,
        plantation_prevalence: rng.random_range(0.4..0.9),
        spacing: (lo, lo + 1.5),
        background_weights: [rng.random_range(0.2..1.0), rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)],
        origin: (cfg.domain_spacing * angle.cos(), cfg.domain_spacing * angle.sin()),
    }
}

/// One labelled block of the corpus.
#[derive(Debug, Clone)]
pub struct CorpusBlock {
    pub id: u64,
    pub domain: usize,
    pub image: RasterGrid,
    pub density: RasterGrid,
    pub cloud: RasterGrid,
    pub trees: TreeAnnotationSet,
    pub tree_count: usize,
}

impl CorpusBlock {
    pub fn labelled(&self) -> Result<LabelledPatch> {
        LabelledPatch::new(self.image.clone(), self.density.clone())
    }

    /// Planar center of the block, meters.
    pub fn center(&self) -> (f64, f64) {
        let gt = self.image.geotransform();
        let half_w = self.image.width() as f64 * gt.pixel_size / 2.0;
        let half_h = self.image.height() as f64 * gt.pixel_size / 2.0;
        (gt.origin_x + half_w, gt.origin_y + half_h)
    }

    pub fn has_plantation(&self) -> bool {
        self.tree_count > 0
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub domains: Vec<DomainProfile>,
    pub blocks: Vec<CorpusBlock>,
}

impl Corpus {
    pub fn block(&self, id: u64) -> Option<&CorpusBlock> {
        self.blocks.get(id as usize).filter(|b| b.id == id)
    }
}

fn random_plantation(rng: &mut ChaCha8Rng, extent: &Bounds, profile: &DomainProfile) -> PlantationBlock {
    let w = extent.max_x - extent.min_x;
    let h = extent.max_y - extent.min_y;
    let fw = rng.random_range(0.3..0.8);
    let fh = rng.random_range(0.3..0.8);
    let x0 = extent.min_x + rng.random_range(0.0..(1.0 - fw)) * w;
    let y0 = extent.min_y + rng.random_range(0.0..(1.0 - fh)) * h;
    PlantationBlock {
        bounds: Bounds { min_x: x0, min_y: y0, max_x: x0 + fw * w, max_y: y0 + fh * h },
        spacing: rng.random_range(profile.spacing.0..profile.spacing.1),
        jitter: 0.5,
        missing_fraction: rng.random_range(0.0..0.2),
    }
}

/// Generates the corpus. Deterministic in `cfg`; blocks are rendered in
/// parallel from per-block seeds.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let counts = allocate_by_strip(cfg.blocks, &cfg.domain_weights)?;
    let domains: Vec<DomainProfile> = (0..cfg.domains()).map(|d| domain_profile(cfg, d)).collect();
    let mut assignments = Vec::with_capacity(cfg.blocks);
    for (d, &count) in counts.iter().enumerate() {
        assignments.extend((0..count).map(|k| (d, k)));
    }
    let side_m = cfg.block_side as f64 * cfg.pixel_size;
    let blocks = assignments
        .par_iter()
        .enumerate()
        .map(|(id, &(d, k))| {
            let profile = &domains[d];
            let per_row = (counts[d] as f64).sqrt().ceil() as usize;
            let gt = GeoTransform::new(
                profile.origin.0 + (k % per_row) as f64 * cfg.block_spacing,
                profile.origin.1 + (k / per_row) as f64 * cfg.block_spacing,
                cfg.pixel_size,
            )?;
            let seed = mix_seed(cfg.seed, id as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let extent =
                Bounds { min_x: gt.origin_x, min_y: gt.origin_y, max_x: gt.origin_x + side_m, max_y: gt.origin_y + side_m };
            let mut plantations = Vec::new();
            if rng.random::<f64>() < profile.plantation_prevalence {
                let n = rng.random_range(1..=2);
                plantations.extend((0..n).map(|_| random_plantation(&mut rng, &extent, profile)));
            }
            let params = SceneParams {
                width: cfg.block_side,
                height: cfg.block_side,
                geotransform: gt,
                plantations,
                background_sites: 5,
                background_weights: profile.background_weights,
                spectral: profile.spectral.clone(),
                cloud_fraction: cfg.cloud_fraction,
                kernel: DensityKernel::default(),
            };
            let scene = generate_synthetic_scene(seed, &params)?;
            let tree_count = scene.trees.points().len();
            Ok(CorpusBlock {
                id: id as u64,
                domain: d,
                image: scene.image,
                density: scene.density,
                cloud: scene.cloud,
                trees: scene.trees,
                tree_count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { config: cfg.clone(), domains, blocks })
}

/// Block ids assigned to the labelled training set, the validation set
/// and the unlabelled pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<u64>,
    pub validation: Vec<u64>,
    pub pool: Vec<u64>,
}

/// Random split of `blocks` ids: `train` and `validation` blocks drawn
/// without replacement, the remainder forms the pool.
pub fn split_corpus(blocks: usize, train: usize, validation: usize, seed: u64) -> Result<CorpusSplit> {
    if train == 0 || validation == 0 || train + validation >= blocks {
        return Err(invalid(format!(
            "cannot split {blocks} blocks into {train} train, {validation} validation and a non-empty pool"
        )));
    }
    let mut ids: Vec<u64> = (0..blocks as u64).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5B11)));
    let mut train_ids = ids[..train].to_vec();
    let mut val_ids = ids[train..train + validation].to_vec();
    let mut pool = ids[train + validation..].to_vec();
    train_ids.sort_unstable();
    val_ids.sort_unstable();
    pool.sort_unstable();
    Ok(CorpusSplit { train: train_ids, validation: val_ids, pool })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig { blocks: 12, block_side: 40, domain_weights: vec![2.0, 1.0, 1.0], ..Default::default() }
    }

    #[test]
    fn corpus_is_deterministic_and_sized() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a.blocks.len(), 12);
        assert_eq!(a.blocks.iter().filter(|b| b.domain == 0).count(), 6);
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.density, y.density);
        }
        assert!(a.blocks.iter().any(|b| b.has_plantation()));
        assert_eq!(a.block(5).unwrap().id, 5);
    }

    #[test]
    fn blocks_do_not_overlap() {
        let c = generate_corpus(&small()).unwrap();
        let ext = c.config.block_side as f64 * c.config.pixel_size;
        for (i, a) in c.blocks.iter().enumerate() {
            for b in &c.blocks[i + 1..] {
                let (pa, pb) = (a.center(), b.center());
                assert!((pa.0 - pb.0).abs() >= ext || (pa.1 - pb.1).abs() >= ext);
            }
        }
    }

    #[test]
    fn split_partitions_ids() {
        let s = split_corpus(126, 10, 10, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.pool.len()), (10, 10, 106));
        let mut all: Vec<u64> = s.train.iter().chain(&s.validation).chain(&s.pool).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..126).collect::<Vec<_>>());
        assert!(split_corpus(20, 10, 10, 0).is_err());
    }
}
