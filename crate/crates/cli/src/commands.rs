use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use densal_core::acquisition::{
    global_reduce, read_stats_jsonl, region_stats, score, tile_regions, write_scores_csv, write_stats_jsonl, GlobalStats,
    RegionStats, ScoringEnsemble,
};
use densal_core::coreset::{
    active_weights, format_summary, select_active_weighted, write_selection_jsonl, CandidatePool, SelectionBatch,
};
use densal_core::experiment::{
    calibration_study, evaluate_predictor, generate_corpus, mix_seed, percentile_grid, run_al_experiment, split_corpus,
    write_calibration_csv, write_report_json, write_summary_csv, CorpusBlock, EvalReport, ExperimentConfig,
};
use densal_core::geoembed::{read_pemb, write_pemb, AttentionTrainConfig, FusedEmbedding, LocationEncoder};
use densal_core::model::{
    load_checkpoint, train_ensemble, write_checkpoint, Checkpoint, LabelledPatch, TrainConfig, TrainedModel,
};
use densal_core::raster::{
    load_pgrd, rasterize_density, read_tree_csv, save_pgrd, write_tree_csv, Bounds, DensityKernel, RasterGrid,
    SceneManifest, TreeAnnotationSet,
};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::failure::{ConfigError, MissingPrerequisite};
use crate::layout::{
    block_name, digest_files, open_prerequisite, read_json, write_atomic, write_json, BlockEntry, CorpusIndex, Layout,
    Role, ShardManifest, TileEntry,
};

// Independent seed streams derived from the master seed.
const SPLIT_STREAM: u64 = 0x5911_7000;
const TRAIN_STREAM: u64 = 0x7a11_0000;
const ATTENTION_STREAM: u64 = 0xa77e_0000;
const SELECT_STREAM: u64 = 0x5e1e_c700;
const CALIBRATION_STREAM: u64 = 0xca11_b000;

fn write_scene(dir: &Path, block: &CorpusBlock, with_density: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_pgrd(dir.join("image.pgrd"), &block.image)?;
    save_pgrd(dir.join("cloud.pgrd"), &block.cloud)?;
    let mut files = vec![PathBuf::from("image.pgrd"), PathBuf::from("cloud.pgrd")];
    let density = if with_density {
        save_pgrd(dir.join("density.pgrd"), &block.density)?;
        files.push(PathBuf::from("density.pgrd"));
        Some(PathBuf::from("density.pgrd"))
    } else {
        None
    };
    let manifest = SceneManifest {
        scene_id: block_name(block.id),
        timestamps: Vec::new(),
        image: PathBuf::from("image.pgrd"),
        cloud: PathBuf::from("cloud.pgrd"),
        cloud_band: 0,
        density,
    };
    manifest.save(dir.join("manifest.json"))?;
    files.push(PathBuf::from("manifest.json"));
    Ok(files)
}

/// Generates the corpus, writes labelled blocks and pool shards, and
/// returns the index with its digest.
pub fn generate(cfg: &RunConfig, layout: &Layout) -> Result<CorpusIndex> {
    let corpus = generate_corpus(&cfg.corpus)?;
    let split = split_corpus(cfg.corpus.blocks, cfg.train_blocks, cfg.validation_blocks, mix_seed(cfg.seed, SPLIT_STREAM))?;
    let dir = layout.corpus_dir();
    let block = |id: u64| corpus.block(id).ok_or_else(|| anyhow!("corpus has no block {id}"));
    let mut files = Vec::new();
    let mut entries = Vec::new();

    let mut labelled: Vec<(u64, Role)> = split
        .train
        .iter()
        .map(|&i| (i, Role::Train))
        .chain(split.validation.iter().map(|&i| (i, Role::Validation)))
        .collect();
    labelled.sort_by_key(|&(i, _)| i);
    let mut tree_sets = Vec::new();
    for &(id, role) in &labelled {
        let b = block(id)?;
        let rel = Layout::labelled_rel(id);
        for f in write_scene(&dir.join(&rel), b, true)? {
            files.push(rel.join(f));
        }
        tree_sets.push(TreeAnnotationSet::new(block_name(id), *b.trees.bounds(), b.trees.points().to_vec())?);
        entries.push(BlockEntry { id, domain: b.domain, role, manifest: rel.join("manifest.json"), shard: None });
    }
    write_atomic(&dir.join(Layout::trees_rel()), |w| Ok(write_tree_csv(w, &tree_sets)?))?;
    files.push(Layout::trees_rel());

    let mut pool = split.pool.clone();
    pool.sort_unstable();
    let per_block = cfg.regions_per_block();
    for (k, ids) in densal_core::acquisition::partition_round_robin(&pool, cfg.shards).into_iter().enumerate() {
        let shard = k as u32;
        let srel = Layout::shard_rel(shard);
        let mut tiles = Vec::new();
        for id in ids {
            let b = block(id)?;
            let trel = PathBuf::from(block_name(id));
            for f in write_scene(&dir.join(&srel).join(&trel), b, false)? {
                files.push(srel.join(&trel).join(f));
            }
            tiles.push(TileEntry { block_id: id, first_region_id: id * per_block, manifest: trel.join("manifest.json") });
            entries.push(BlockEntry {
                id,
                domain: b.domain,
                role: Role::Pool,
                manifest: srel.join(&trel).join("manifest.json"),
                shard: Some(shard),
            });
        }
        write_json(&layout.shard_manifest(shard), &ShardManifest { shard_id: shard, tiles })?;
        files.push(srel.join("manifest.json"));
    }
    entries.sort_by_key(|e| e.id);

    let digest = digest_files(&dir, &files)?;
    let index = CorpusIndex {
        config: cfg.corpus.clone(),
        shards: cfg.shards as u32,
        region_side: cfg.region_side,
        regions_per_block: per_block,
        split,
        blocks: entries,
        files,
        digest,
    };
    write_json(&layout.corpus_index(), &index)?;
    Ok(index)
}

/// Loads the corpus index and checks that the config still describes it.
pub fn load_index(cfg: &RunConfig, layout: &Layout) -> Result<CorpusIndex> {
    let index: CorpusIndex = read_json(&layout.corpus_index(), "generate")?;
    if index.region_side != cfg.region_side || index.config != cfg.corpus {
        return Err(ConfigError(format!(
            "corpus in {} was generated with different corpus settings or region_side; rerun `densal generate`",
            layout.corpus_dir().display()
        ))
        .into());
    }
    Ok(index)
}

struct Scene {
    manifest: SceneManifest,
    image: RasterGrid,
    cloud: RasterGrid,
    density: Option<RasterGrid>,
}

fn load_scene(path: &Path) -> Result<Scene> {
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = SceneManifest::load(path)?;
    manifest.validate(base).with_context(|| format!("validating {}", path.display()))?;
    let image = load_pgrd(base.join(&manifest.image))?;
    let cloud = load_pgrd(base.join(&manifest.cloud))?;
    let density = manifest.density.as_ref().map(|d| load_pgrd(base.join(d))).transpose()?;
    Ok(Scene { manifest, image, cloud, density })
}

fn extent(grid: &RasterGrid) -> Bounds {
    let gt = grid.geotransform();
    Bounds {
        min_x: gt.origin_x,
        min_y: gt.origin_y,
        max_x: gt.origin_x + grid.width() as f64 * gt.pixel_size,
        max_y: gt.origin_y + grid.height() as f64 * gt.pixel_size,
    }
}

fn load_trees(layout: &Layout) -> Result<BTreeMap<String, TreeAnnotationSet>> {
    let path = layout.corpus_dir().join(Layout::trees_rel());
    let sets = read_tree_csv(open_prerequisite(&path, "generate")?)?;
    Ok(sets.into_iter().map(|s| (s.block_id().to_string(), s)).collect())
}

fn trees_for(trees: &BTreeMap<String, TreeAnnotationSet>, id: u64, image: &RasterGrid) -> Result<TreeAnnotationSet> {
    let points = trees.get(&block_name(id)).map(|s| s.points().to_vec()).unwrap_or_default();
    Ok(TreeAnnotationSet::new(block_name(id), extent(image), points)?)
}

/// Training patch of a labelled block: density rasterized from its trees,
/// cloudy pixels masked.
fn training_patch(
    cfg: &RunConfig,
    layout: &Layout,
    entry: &BlockEntry,
    trees: &BTreeMap<String, TreeAnnotationSet>,
) -> Result<LabelledPatch> {
    let scene = load_scene(&layout.corpus_dir().join(&entry.manifest))?;
    let mut image = scene.image;
    let set = trees_for(trees, entry.id, &image)?;
    let density = rasterize_density(&set, image.geotransform(), image.width(), image.height(), &DensityKernel::default())?;
    if density.dropped_mass > 0.0 {
        log::debug!("{}: {:.3} trees of kernel mass fell outside the block", block_name(entry.id), density.dropped_mass);
    }
    let prob = scene.cloud.band(scene.manifest.cloud_band).to_vec();
    for (i, p) in prob.into_iter().enumerate() {
        if p > cfg.train_max_cloud_prob {
            image.set_nodata(i / image.width(), i % image.width(), true);
        }
    }
    Ok(LabelledPatch::new(image, density.grid)?)
}

fn entry<'a>(index: &'a CorpusIndex, id: u64) -> Result<&'a BlockEntry> {
    index.block(id).ok_or_else(|| anyhow!("corpus index has no block {id}"))
}

/// Trains the ensemble on the labelled training blocks and writes one
/// checkpoint per member.
pub fn train(cfg: &RunConfig, layout: &Layout) -> Result<Vec<PathBuf>> {
    let index = load_index(cfg, layout)?;
    let trees = load_trees(layout)?;
    let patches: Vec<LabelledPatch> = index
        .split
        .train
        .iter()
        .map(|&id| training_patch(cfg, layout, entry(&index, id)?, &trees))
        .collect::<Result<_>>()?;
    let tcfg = TrainConfig { seed: mix_seed(cfg.seed, TRAIN_STREAM), ..cfg.training.clone() };
    let members = train_ensemble(&patches, &cfg.model, &tcfg, cfg.ensemble_size)?;
    for (i, m) in members.iter().enumerate() {
        log::info!("member {i}: final loss {:.5}", m.final_loss());
    }
    let encoder = LocationEncoder::new(cfg.encoder.clone())?;
    let acfg = AttentionTrainConfig { seed: mix_seed(cfg.seed, ATTENTION_STREAM), ..cfg.attention.clone() };
    let ensemble = ScoringEnsemble::fit(members, encoder, &patches, &acfg)?;
    let mut paths = Vec::new();
    for (i, (m, h)) in ensemble.members().iter().zip(ensemble.heads()).enumerate() {
        let ckpt = Checkpoint { model: m.clone(), attention: Some(h.clone()), encoder: Some(cfg.encoder.clone()) };
        let path = layout.member(i);
        write_atomic(&path, |w| Ok(write_checkpoint(w, &ckpt)?))?;
        paths.push(path);
    }
    Ok(paths)
}

fn load_members(cfg: &RunConfig, layout: &Layout) -> Result<Vec<Checkpoint>> {
    (0..cfg.ensemble_size)
        .map(|i| {
            let path = layout.member(i);
            if !path.exists() {
                return Err(MissingPrerequisite(format!("{} (run `densal train` first)", path.display())).into());
            }
            load_checkpoint(&path).with_context(|| format!("loading {}", path.display()))
        })
        .collect()
}

fn load_ensemble(cfg: &RunConfig, layout: &Layout) -> Result<ScoringEnsemble> {
    let mut members = Vec::new();
    let mut heads = Vec::new();
    let mut encoder = None;
    for (i, ck) in load_members(cfg, layout)?.into_iter().enumerate() {
        heads.push(ck.attention.ok_or_else(|| anyhow!("{} has no attention head", layout.member(i).display()))?);
        encoder = encoder.or(ck.encoder);
        members.push(ck.model);
    }
    let spec = encoder.ok_or_else(|| anyhow!("checkpoints carry no location encoder"))?;
    Ok(ScoringEnsemble::new(members, heads, LocationEncoder::new(spec)?)?)
}

fn shard_outputs(
    cfg: &RunConfig,
    layout: &Layout,
    index: &CorpusIndex,
    ensemble: &ScoringEnsemble,
    shard: u32,
) -> Result<(Vec<RegionStats>, Vec<FusedEmbedding>)> {
    let manifest: ShardManifest = read_json(&layout.shard_manifest(shard), "generate")?;
    let base = layout.corpus_dir().join(Layout::shard_rel(shard));
    let per_tile = manifest
        .tiles
        .par_iter()
        .map(|t| -> Result<(Vec<RegionStats>, Vec<FusedEmbedding>)> {
            let scene = load_scene(&base.join(&t.manifest))?;
            let valid: Vec<bool> = scene
                .cloud
                .band(scene.manifest.cloud_band)
                .iter()
                .zip(scene.cloud.nodata_mask())
                .map(|(&p, &masked)| !masked && p <= cfg.max_cloud_prob)
                .collect();
            let field = ensemble.pixel_field(&scene.image, Some(&valid))?;
            let regions = tile_regions(field.width, field.height, index.region_side, t.first_region_id, shard);
            let stats = regions.iter().filter_map(|r| region_stats(r, &field)).collect();
            let emb = regions.iter().filter_map(|r| field.region_embedding(r)).collect();
            Ok((stats, emb))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut stats, mut emb): (Vec<RegionStats>, Vec<FusedEmbedding>) =
        per_tile.into_iter().fold((Vec::new(), Vec::new()), |(mut s, mut e), (ts, te)| {
            s.extend(ts);
            e.extend(te);
            (s, e)
        });
    stats.sort_by_key(|s| s.region_id);
    emb.sort_by_key(|e| e.region_id);
    Ok((stats, emb))
}

/// Phase 1: per-region statistics and embeddings for one shard, or for
/// every shard when `shard` is `None`. Returns the shards processed.
pub fn stats(cfg: &RunConfig, layout: &Layout, shard: Option<u32>) -> Result<Vec<(u32, usize)>> {
    let index = load_index(cfg, layout)?;
    let shards: Vec<u32> = match shard {
        Some(k) if k >= index.shards => {
            return Err(ConfigError(format!("--shard {k} out of range; corpus has {} shards", index.shards)).into())
        }
        Some(k) => vec![k],
        None => (0..index.shards).collect(),
    };
    let ensemble = load_ensemble(cfg, layout)?;
    shards
        .par_iter()
        .map(|&k| {
            let (stats, emb) = shard_outputs(cfg, layout, &index, &ensemble, k)?;
            write_atomic(&layout.stats(k), |w| Ok(write_stats_jsonl(w, &stats)?))?;
            write_atomic(&layout.embeddings(k), |w| Ok(write_pemb(w, &emb)?))?;
            Ok((k, stats.len()))
        })
        .collect()
}

fn read_all_stats(layout: &Layout, shards: u32) -> Result<Vec<RegionStats>> {
    let mut all = Vec::new();
    for k in 0..shards {
        let path = layout.stats(k);
        let r = open_prerequisite(&path, &format!("stats --shard {k}"))?;
        all.extend(read_stats_jsonl(r).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(all)
}

fn read_all_embeddings(layout: &Layout, shards: u32) -> Result<Vec<FusedEmbedding>> {
    let mut all = Vec::new();
    for k in 0..shards {
        let path = layout.embeddings(k);
        let r = open_prerequisite(&path, &format!("stats --shard {k}"))?;
        all.extend(read_pemb(r).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(all)
}

/// Phase 2: reduces every shard's statistics into the global quantities.
pub fn reduce(cfg: &RunConfig, layout: &Layout) -> Result<GlobalStats> {
    let index = load_index(cfg, layout)?;
    let stats = read_all_stats(layout, index.shards)?;
    let globals = global_reduce(&stats)?;
    write_json(&layout.globals(), &globals)?;
    Ok(globals)
}

/// Phase 3: scores every region and selects the batch.
pub fn select(cfg: &RunConfig, layout: &Layout) -> Result<SelectionBatch> {
    let index = load_index(cfg, layout)?;
    let stats = read_all_stats(layout, index.shards)?;
    let globals: GlobalStats = read_json(&layout.globals(), "reduce")?;
    if globals.regions != stats.len() {
        return Err(anyhow!(
            "{} covers {} regions but the shards hold {}; rerun `densal reduce`",
            layout.globals().display(),
            globals.regions,
            stats.len()
        ));
    }
    let scores = score(&stats, &globals)?;
    write_atomic(&layout.scores(), |w| Ok(write_scores_csv(w, &scores)?))?;
    let embeddings = read_all_embeddings(layout, index.shards)?;
    let pool = CandidatePool::from_scores(embeddings, &scores, cfg.pool_size)?;
    let weights = active_weights(&pool);
    let batch = select_active_weighted(&pool, &weights, cfg.budget, mix_seed(cfg.seed, SELECT_STREAM), &cfg.kmeans)?;
    write_atomic(&layout.selection(), |w| Ok(write_selection_jsonl(w, &batch)?))?;
    let summary = format_summary(&batch);
    write_atomic(&layout.selection_summary(), |w| {
        use std::io::Write;
        w.write_all(summary.as_bytes())?;
        Ok(())
    })?;
    Ok(batch)
}

fn experiment_view(cfg: &RunConfig, index: &CorpusIndex) -> ExperimentConfig {
    ExperimentConfig {
        seed: cfg.seed,
        corpus: index.config.clone(),
        train_blocks: cfg.train_blocks,
        validation_blocks: cfg.validation_blocks,
        budgets: Vec::new(),
        strategies: Vec::new(),
        ensemble_size: cfg.ensemble_size,
        eval_members: cfg.ensemble_size,
        repetitions: 1,
        model: cfg.model.clone(),
        training: cfg.training.clone(),
        attention: cfg.attention.clone(),
        encoder: cfg.encoder.clone(),
        pool_size: cfg.pool_size,
        kmeans_min_pool: cfg.experiment.kmeans_min_pool,
        percentile_step: cfg.percentile_step,
    }
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_atomic(&dir.join("report.json"), |w| Ok(write_report_json(w, report)?))?;
    write_atomic(&dir.join("summary.csv"), |w| Ok(write_summary_csv(w, report)?))?;
    write_atomic(&dir.join("calibration.csv"), |w| Ok(write_calibration_csv(w, report)?))?;
    Ok(())
}

/// Evaluates the trained ensemble on the validation blocks.
pub fn eval(cfg: &RunConfig, layout: &Layout) -> Result<EvalReport> {
    let index = load_index(cfg, layout)?;
    let members: Vec<TrainedModel> = load_members(cfg, layout)?.into_iter().map(|c| c.model).collect();
    let trees = load_trees(layout)?;
    let blocks: Vec<CorpusBlock> = index
        .split
        .validation
        .iter()
        .map(|&id| {
            let e = entry(&index, id)?;
            let scene = load_scene(&layout.corpus_dir().join(&e.manifest))?;
            let density = scene.density.ok_or_else(|| anyhow!("{} has no density raster", e.manifest.display()))?;
            let set = trees_for(&trees, id, &scene.image)?;
            let tree_count = set.len();
            Ok(CorpusBlock { id, domain: e.domain, image: scene.image, density, cloud: scene.cloud, trees: set, tree_count })
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&CorpusBlock> = blocks.iter().collect();
    let base = evaluate_predictor(&members[..], &refs, cfg.hectare_side())?;
    let calibration = if cfg.model.dropout_rate > 0.0 {
        let grid = percentile_grid(cfg.percentile_step);
        Some(calibration_study(&members, &refs, &grid, mix_seed(cfg.seed, CALIBRATION_STREAM))?)
    } else {
        log::warn!("model.dropout_rate is 0; skipping the MC-dropout calibration comparison");
        None
    };
    let report = EvalReport {
        config: experiment_view(cfg, &index),
        split: index.split.clone(),
        base,
        cells: Vec::new(),
        summary: Vec::new(),
        calibration,
    };
    write_report(&layout.eval_dir(), &report)?;
    Ok(report)
}

/// Runs the strategy comparison on the synthetic corpus.
pub fn bench(cfg: &RunConfig, layout: &Layout) -> Result<EvalReport> {
    let report = run_al_experiment(&cfg.experiment)?;
    write_report(&layout.bench_dir(), &report)?;
    Ok(report)
}
