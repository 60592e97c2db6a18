use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use pvmap_core::deploy::write_observation_lines;
use pvmap_core::detect::{write_box_lines, BoxLine};
use pvmap_core::ingest::write_feature_csv;
use pvmap_core::rng::derive_seed;
use pvmap_core::synth::{
    dataset_to_table, generate_feature_table, generate_regression, generate_scene,
    render_detections, DetectorModel, NoisyDetector, RegressionKind, SynthRegressionSpec,
};

use crate::io::{to_json, write_manifest, write_text, ValidationFailed};
use crate::Ctx;

/// Stream for the detector seed derived from the run seed.
const DETECTOR_STREAM: u64 = 0xde7;

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Rooftop scene with ground truth, detections, households and true deployment.
    Scene(SceneArgs),
    /// Regression dataset with known generating terms.
    Regression(RegressionArgs),
    /// Block-group feature table within the documented feature ranges.
    Table(TableArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DetectorChoice {
    Perfect,
    Noisy,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub block_groups: Option<usize>,
    /// Inclusive image-count range per block group, as `lo,hi`.
    #[arg(long, value_delimiter = ',')]
    pub images: Option<Vec<usize>>,
    #[arg(long)]
    pub adoption: Option<f64>,
    #[arg(long, value_enum)]
    pub detector: Option<DetectorChoice>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub drop: Option<f64>,
    #[arg(long)]
    pub spurious: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindChoice {
    Linear,
    Friedman,
    IncomeRace,
}

#[derive(Debug, Args)]
pub struct RegressionArgs {
    #[arg(long, value_enum)]
    pub kind: KindChoice,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Feature CSV with target column `y`.
    #[arg(long)]
    pub out: PathBuf,
    /// Generating coefficients as `term,coef` CSV.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.323)]
    pub policy_null_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth_cmd(ctx: &Ctx, cmd: &SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Scene(a) => scene_cmd(ctx, a),
        SynthCommand::Regression(a) => regression_cmd(ctx, a),
        SynthCommand::Table(a) => {
            let t = generate_feature_table(a.n, ctx.seed, a.policy_null_fraction)
                .map_err(|e| ValidationFailed(format!("synth: {e}")))?;
            write_text(&a.out, &write_feature_csv(&t))
        }
    }
}

fn scene_cmd(ctx: &Ctx, a: &SceneArgs) -> Result<()> {
    let mut spec = ctx.cfg.synth.scene.clone();
    spec.seed = ctx.seed;
    if let Some(b) = a.block_groups {
        spec.block_groups = b;
    }
    if let Some(r) = &a.images {
        let [lo, hi] = r[..] else {
            return Err(ValidationFailed("synth: --images takes lo,hi".into()).into());
        };
        spec.images_per_block_group = (lo, hi);
    }
    if let Some(p) = a.adoption {
        spec.adoption_prob = p;
    }
    let mut detector = match (a.detector, ctx.cfg.synth.detector) {
        (Some(DetectorChoice::Perfect), _) => DetectorModel::Perfect,
        (Some(DetectorChoice::Noisy), DetectorModel::Noisy(n))
        | (None, DetectorModel::Noisy(n)) => DetectorModel::Noisy(n),
        (Some(DetectorChoice::Noisy), DetectorModel::Perfect) => {
            DetectorModel::Noisy(NoisyDetector::default())
        }
        (None, DetectorModel::Perfect) => DetectorModel::Perfect,
    };
    if let DetectorModel::Noisy(n) = &mut detector {
        n.seed = derive_seed(ctx.seed, DETECTOR_STREAM);
        n.jitter_px = a.jitter.unwrap_or(n.jitter_px);
        n.drop_prob = a.drop.unwrap_or(n.drop_prob);
        n.spurious_rate = a.spurious.unwrap_or(n.spurious_rate);
    }
    let scene = generate_scene(&spec).map_err(|e| ValidationFailed(format!("synth: {e}")))?;
    let dets = render_detections(&scene, &detector)
        .map_err(|e| ValidationFailed(format!("synth: {e}")))?;
    let det_lines: Vec<BoxLine> = dets
        .iter()
        .flat_map(|d| {
            d.boxes
                .iter()
                .map(|b| BoxLine::from_detection(&d.image_id, b))
        })
        .collect();
    let dir = &a.out_dir;
    write_text(
        &dir.join("ground_truth.jsonl"),
        &write_box_lines(&scene.ground_truth_lines()),
    )?;
    write_text(&dir.join("detections.jsonl"), &write_box_lines(&det_lines))?;
    write_text(
        &dir.join("observations.jsonl"),
        &write_observation_lines(&scene.observation_lines(&dets)),
    )?;
    write_text(&dir.join("households.csv"), &scene.households_csv())?;
    write_text(&dir.join("truth.csv"), &scene.truth_csv())?;
    write_manifest(
        dir,
        "synth scene",
        ctx.seed,
        serde_json::json!({ "scene": spec, "detector": detector, "images": scene.images.len() }),
    )?;
    eprintln!(
        "{} images in {} block groups",
        scene.images.len(),
        scene.truth.len()
    );
    Ok(())
}

fn regression_cmd(ctx: &Ctx, a: &RegressionArgs) -> Result<()> {
    let kind = match a.kind {
        KindChoice::Linear => RegressionKind::Linear,
        KindChoice::Friedman => RegressionKind::Friedman,
        KindChoice::IncomeRace => RegressionKind::IncomeRace,
    };
    let spec = SynthRegressionSpec {
        kind,
        n: a.n,
        noise_sd: a.noise,
        seed: ctx.seed,
    };
    let r = generate_regression(&spec).map_err(|e| ValidationFailed(format!("synth: {e}")))?;
    let table = dataset_to_table(&r.dataset).context("synth: table")?;
    write_text(&a.out, &write_feature_csv(&table))?;
    if let Some(p) = &a.coefficients {
        let mut out = format!("# seed={}\nterm,coef\n", ctx.seed);
        for (t, c) in &r.coefficients {
            out.push_str(&format!("{t},{c}\n"));
        }
        write_text(p, &out)?;
    }
    eprintln!("{}", to_json(&spec).trim_end());
    Ok(())
}
