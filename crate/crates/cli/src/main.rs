use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod failure;
mod layout;

use config::RunConfig;
use failure::{classify, ConfigError, ErrorRecord, EXIT_CONFIG};
use layout::Layout;

/// Batch active learning for per-pixel tree density regression.
#[derive(Debug, Parser)]
#[command(name = "densal", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Shard processed by `stats`; all shards when omitted.
    #[arg(long, global = true, value_name = "K")]
    shard: Option<u32>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Run directory; overrides `work_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus: labelled blocks and pool shards.
    Generate,
    /// Train the ensemble and its attention heads on the labelled blocks.
    Train,
    /// Per-region statistics and embeddings for one pool shard.
    Stats,
    /// Reduce shard statistics into global quantities.
    Reduce,
    /// Score every region and select the annotation batch.
    Select,
    /// Evaluate the ensemble on the validation blocks.
    Eval,
    /// Run the active/naive/manual strategy comparison.
    Bench,
    /// generate, train, stats, reduce and select in sequence.
    Run,
    /// Print the effective configuration as TOML.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config::resolve(cli.config.as_deref())?;
    cfg.apply_overrides(cli.seed, cli.out.clone());
    cfg.validate()?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(ConfigError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if cli.shard.is_some() && !matches!(cli.command, Command::Stats) {
        log::warn!("--shard only applies to `stats`; ignoring it");
    }
    let layout = Layout::new(&cfg.work_dir);
    match cli.command {
        Command::Generate => generate(&cfg, &layout),
        Command::Train => train(&cfg, &layout),
        Command::Stats => stats(&cfg, &layout, cli.shard),
        Command::Reduce => reduce(&cfg, &layout),
        Command::Select => select(&cfg, &layout),
        Command::Eval => eval(&cfg, &layout),
        Command::Bench => bench(&cfg, &layout),
        Command::Run => {
            generate(&cfg, &layout)?;
            train(&cfg, &layout)?;
            stats(&cfg, &layout, None)?;
            reduce(&cfg, &layout)?;
            select(&cfg, &layout)
        }
        Command::Config => {
            print!("{}", toml::to_string(&cfg)?);
            Ok(())
        }
    }
}

fn generate(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let index = commands::generate(cfg, layout)?;
    println!(
        "corpus: {} blocks ({} train, {} validation, {} pool in {} shards)",
        index.blocks.len(),
        index.split.train.len(),
        index.split.validation.len(),
        index.split.pool.len(),
        index.shards
    );
    println!("corpus digest: {}", index.digest);
    Ok(())
}

fn train(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    for p in commands::train(cfg, layout)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn stats(cfg: &RunConfig, layout: &Layout, shard: Option<u32>) -> Result<()> {
    for (k, n) in commands::stats(cfg, layout, shard)? {
        println!("shard {k}: {n} regions -> {}", layout.stats(k).display());
    }
    Ok(())
}

fn reduce(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let g = commands::reduce(cfg, layout)?;
    println!("regions {} pixels {} sum_s {:.6e} sum_d2 {:.6e}", g.regions, g.n_total, g.sum_s, g.sum_d2);
    Ok(())
}

fn select(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let batch = commands::select(cfg, layout)?;
    print!("{}", densal_core::coreset::format_summary(&batch));
    println!("wrote {}", layout.selection().display());
    Ok(())
}

fn eval(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let r = commands::eval(cfg, layout)?;
    println!("validation MAE: {:.3} trees/ha per pixel, {:.3} trees/ha per hectare", r.base.pixel_mae, r.base.hectare_mae);
    if let Some(c) = &r.calibration {
        println!("ensemble retained-MSE <= MC-dropout at {:.0}% of percentiles", 100.0 * c.ensemble_dominance);
    }
    Ok(())
}

fn bench(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let r = commands::bench(cfg, layout)?;
    println!("{:<8} {:>6} {:>5} {:>16} {:>16}", "strategy", "budget", "runs", "pixel MAE", "hectare MAE");
    for row in &r.summary {
        println!(
            "{:<8} {:>6} {:>5} {:>9.3} ±{:<6.3} {:>9.3} ±{:<6.3}",
            row.strategy.to_string(),
            row.budget,
            row.runs,
            row.pixel_mae_mean,
            row.pixel_mae_std,
            row.hectare_mae_mean,
            row.hectare_mae_std
        );
    }
    println!("wrote {}", layout.bench_dir().display());
    Ok(())
}

fn report(rec: &ErrorRecord) {
    eprintln!("{}", serde_json::to_string(rec).unwrap_or_else(|_| rec.message.clone()));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            report(&ErrorRecord { error: "usage", exit_code: EXIT_CONFIG, message: e.kind().to_string() });
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let rec = classify(&err);
            report(&rec);
            ExitCode::from(rec.exit_code as u8)
        }
    }
}
