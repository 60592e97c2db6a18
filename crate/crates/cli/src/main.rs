//! `pvmap`: rooftop PV mapping and adoption-modeling pipeline.
//!
//! Exit codes: 0 on success, 1 when inputs fail validation, 2 on runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

mod config;
mod io;
mod model;
mod pipeline;
mod synth;

use config::RunConfig;
use io::ValidationFailed;

#[derive(Debug, Parser)]
#[command(
    name = "pvmap",
    version,
    about = "Rooftop PV mapping and adoption modeling"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run seed; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cover populated census blocks with fixed-size image footprints.
    PlanTiles(pipeline::PlanTilesArgs),
    /// Download planned tiles through the cache (credential from PVMAP_TILE_KEY).
    FetchTiles(pipeline::FetchTilesArgs),
    /// Score detections against ground truth (AP/AR).
    EvalDetect(pipeline::EvalDetectArgs),
    /// Roll detections up to block-group deployment measures.
    Aggregate(pipeline::AggregateArgs),
    /// Join block groups with overlays, zips, tracts and targets.
    JoinFeatures(pipeline::JoinFeaturesArgs),
    /// Check a feature table against the documented ranges.
    Validate(pipeline::ValidateArgs),
    /// Train the sixteen-model comparison grid.
    Train(model::TrainArgs),
    /// Feature importance and SHAP summaries for trained models.
    Explain(model::ExplainArgs),
    /// OLS with robust standard errors and a side-by-side table.
    Ols(model::OlsArgs),
    /// Average marginal effects across a moderator grid.
    Ame(model::AmeArgs),
    /// Synthetic scenes, regression data and feature tables.
    #[command(subcommand)]
    Synth(synth::SynthCommand),
    /// Render model-comparison tables from a training run.
    Report(model::ReportArgs),
}

/// Resolved configuration shared by subcommands.
pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
}

fn run(cli: Cli) -> Result<()> {
    let cfg =
        RunConfig::load(cli.config.as_deref()).map_err(|e| ValidationFailed(format!("{e:#}")))?;
    if let Some(n) = cli.threads.or(cfg.threads) {
        if n == 0 {
            return Err(ValidationFailed("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")?;
    }
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(cfg.seed),
        cfg,
    };
    match &cli.command {
        Command::PlanTiles(a) => pipeline::plan_tiles_cmd(&ctx, a),
        Command::FetchTiles(a) => pipeline::fetch_tiles_cmd(&ctx, a),
        Command::EvalDetect(a) => pipeline::eval_detect_cmd(&ctx, a),
        Command::Aggregate(a) => pipeline::aggregate_cmd(&ctx, a),
        Command::JoinFeatures(a) => pipeline::join_features_cmd(&ctx, a),
        Command::Validate(a) => pipeline::validate_cmd(&ctx, a),
        Command::Train(a) => model::train_cmd(&ctx, a),
        Command::Explain(a) => model::explain_cmd(&ctx, a),
        Command::Ols(a) => model::ols_cmd(&ctx, a),
        Command::Ame(a) => model::ame_cmd(&ctx, a),
        Command::Synth(c) => synth::synth_cmd(&ctx, c),
        Command::Report(a) => model::report_cmd(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<ValidationFailed>().is_some() => {
            eprintln!("validation error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
