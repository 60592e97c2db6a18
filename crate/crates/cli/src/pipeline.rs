use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use pvmap_core::deploy::{
    deployment_csv, read_deployment_csv, read_households_csv, read_observation_lines, rollup,
    ImageObservation, PvCounting,
};
use pvmap_core::detect::{
    eval_report, nms, read_box_lines, BoxClass, DetectionSet, EvalConfig, EvalCorpus,
};
use pvmap_core::geo::{plan_tiles, read_block_units, select_populated, TilePlan};
use pvmap_core::ingest::{
    assemble_feature_table, read_feature_csv, read_overlay_layer, read_tract_csv, validate_schema,
    write_feature_csv, AssemblyInputs, FeatureSchema, HttpTransport, TileFetchConfig, TileFetcher,
    IMPUTED_FEATURES,
};
use rayon::prelude::*;

use crate::io::{emit, read_text, write_text, ValidationFailed};
use crate::Ctx;

/// Environment variable holding the tile endpoint credential.
pub const TILE_KEY_ENV: &str = "PVMAP_TILE_KEY";

#[derive(Debug, Args)]
pub struct PlanTilesArgs {
    /// Census blocks as GeoJSON with `geoid` and `population` properties.
    #[arg(long)]
    pub blocks: PathBuf,
    /// JSON-lines tile plan, one unit per line.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub zoom: Option<u32>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
}

pub fn plan_tiles_cmd(ctx: &Ctx, a: &PlanTilesArgs) -> Result<()> {
    let g = &ctx.cfg.geo;
    let (zoom, w, h) = (
        a.zoom.unwrap_or(g.zoom),
        a.width.unwrap_or(g.width_px),
        a.height.unwrap_or(g.height_px),
    );
    let blocks = read_block_units(&read_text(&a.blocks)?).context("geo: reading blocks")?;
    let units = select_populated(blocks);
    let plans: Vec<TilePlan> = units
        .par_iter()
        .map(|u| plan_tiles(u, zoom, w, h))
        .collect::<Result<_, _>>()
        .context("geo: planning tiles")?;
    let mut out = String::new();
    for p in &plans {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    write_text(&a.out, &out)?;
    let tiles: usize = plans.iter().map(|p| p.footprints.len()).sum();
    eprintln!("planned {tiles} tiles for {} populated units", plans.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct FetchTilesArgs {
    /// Tile plan written by `plan-tiles`.
    #[arg(long)]
    pub plan: PathBuf,
    /// JSON-lines provenance, one tile per line.
    #[arg(long)]
    pub out: PathBuf,
    /// URL template with {lat} {lon} {zoom} {width} {height} and optional {key}.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Serve from cache and fixtures only.
    #[arg(long)]
    pub offline: bool,
    #[arg(long)]
    pub fixture_dir: Option<PathBuf>,
}

pub fn fetch_tiles_cmd(ctx: &Ctx, a: &FetchTilesArgs) -> Result<()> {
    let t = &ctx.cfg.tiles;
    let cfg = TileFetchConfig {
        endpoint: a.endpoint.clone().unwrap_or_else(|| t.endpoint.clone()),
        cache_dir: a.cache_dir.clone().unwrap_or_else(|| t.cache_dir.clone()),
        rate_per_sec: t.rate_per_sec,
        burst: t.burst,
        retry: t.retry.clone().unwrap_or_default(),
        offline: a.offline || t.offline,
        fixture_dir: a.fixture_dir.clone().or_else(|| t.fixture_dir.clone()),
        credential: std::env::var(TILE_KEY_ENV).ok().filter(|k| !k.is_empty()),
    };
    cfg.validate()
        .map_err(|e| ValidationFailed(format!("ingest: {e}")))?;
    let mut footprints = Vec::new();
    for (i, line) in read_text(&a.plan)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: TilePlan =
            serde_json::from_str(line).with_context(|| format!("geo: plan line {}", i + 1))?;
        footprints.extend(p.footprints);
    }
    let fetcher = TileFetcher::new(
        cfg,
        HttpTransport::new(Duration::from_secs_f64(ctx.cfg.tiles.timeout_s)),
    )
    .context("ingest: tile client")?;
    let results: Vec<_> = footprints.par_iter().map(|fp| fetcher.fetch(fp)).collect();
    let mut out = String::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(tile) => {
                out.push_str(&serde_json::to_string(&tile.provenance)?);
                out.push('\n');
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    write_text(&a.out, &out)?;
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("ingest: {f}");
        }
        bail!(
            "ingest: {} of {} tiles failed",
            failures.len(),
            footprints.len()
        );
    }
    eprintln!(
        "fetched {} tiles ({} network requests)",
        footprints.len(),
        fetcher.network_calls()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassChoice {
    Roof,
    Pv,
    /// Mean over both classes.
    All,
}

#[derive(Debug, Args)]
pub struct EvalDetectArgs {
    /// Detections as JSON lines of boxes with scores.
    #[arg(long)]
    pub detections: PathBuf,
    /// Ground truth as JSON lines of boxes.
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Apply class-wise NMS to detections first.
    #[arg(long)]
    pub nms: bool,
    /// Emit the 12-line summary block instead of CSV.
    #[arg(long)]
    pub coco_text: bool,
    #[arg(long, value_enum, default_value = "all")]
    pub class: ClassChoice,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval_detect_cmd(ctx: &Ctx, a: &EvalDetectArgs) -> Result<()> {
    let dets = read_box_lines(&read_text(&a.detections)?).context("detect: reading detections")?;
    let gts =
        read_box_lines(&read_text(&a.ground_truth)?).context("detect: reading ground truth")?;
    let mut by_image: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for d in &dets {
        by_image
            .entry(d.image_id.clone())
            .or_default()
            .push(d.to_detection().context("detect: detection box")?);
    }
    let mut corpus = EvalCorpus::default();
    for (id, boxes) in by_image {
        let set = DetectionSet::new(id.clone(), boxes).context("detect: detection set")?;
        let set = if a.nms {
            nms(&set, ctx.cfg.nms.thresholds())
        } else {
            set
        };
        for b in set.boxes {
            corpus.add_detection(&id, b);
        }
    }
    for g in &gts {
        corpus.add_ground_truth(
            &g.image_id,
            g.to_ground_truth().context("detect: ground-truth box")?,
        );
    }
    let report = eval_report(&corpus, &EvalConfig::default()).context("detect: evaluation")?;
    let text = if a.coco_text {
        let classes = match a.class {
            ClassChoice::Roof => vec![BoxClass::Roof],
            ClassChoice::Pv => vec![BoxClass::Pv],
            ClassChoice::All => vec![BoxClass::Roof, BoxClass::Pv],
        };
        report.coco_text(&classes)
    } else {
        report.summary_csv()
    };
    emit(a.out.as_deref(), &text)
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Per-image detections with block group and ground sample distance.
    #[arg(long)]
    pub observations: PathBuf,
    /// `geoid,households` CSV.
    #[arg(long)]
    pub households: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Count touching PV boxes (grown by this many px) as one system.
    #[arg(long)]
    pub merge_eps: Option<f64>,
}

pub fn aggregate_cmd(ctx: &Ctx, a: &AggregateArgs) -> Result<()> {
    let lines = read_observation_lines(&read_text(&a.observations)?)
        .context("deploy: reading observations")?;
    let households =
        read_households_csv(&read_text(&a.households)?).context("deploy: reading households")?;
    let thresholds = ctx.cfg.nms.thresholds();
    let obs: Vec<ImageObservation> = lines
        .par_iter()
        .map(|l| -> Result<ImageObservation> {
            let set = l
                .detection_set()
                .with_context(|| format!("detect: image {}", l.image_id))?;
            Ok(ImageObservation::from_detections(
                &nms(&set, thresholds),
                &l.block_group_id,
                l.gsd_m_per_px,
            )?)
        })
        .collect::<Result<_>>()
        .context("deploy: building observations")?;
    let counting = match a.merge_eps.or(ctx.cfg.deploy.merge_eps_px) {
        Some(eps_px) => PvCounting::MergeTouching { eps_px },
        None => PvCounting::PerBox,
    };
    let out = rollup(&obs, &households, counting);
    write_text(&a.out, &deployment_csv(&out.records))?;
    if !out.errors.is_empty() {
        for e in &out.errors {
            eprintln!("deploy: {e}");
        }
        return Err(ValidationFailed(format!(
            "deploy: {} block groups rejected",
            out.errors.len()
        ))
        .into());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct JoinFeaturesArgs {
    /// Block groups as GeoJSON keyed by `geoid`, carrying block-group attributes.
    #[arg(long)]
    pub block_groups: PathBuf,
    /// Overlay layers joined by largest overlap share, keyed by `id`.
    #[arg(long)]
    pub overlay: Vec<PathBuf>,
    /// Zip layer keyed by `id` with `population`.
    #[arg(long)]
    pub zips: Option<PathBuf>,
    /// Tract vulnerability CSV.
    #[arg(long)]
    pub tracts: Option<PathBuf>,
    /// Deployment CSV from `aggregate`.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Features filled by adjacent-mean imputation (defaults to home value and year built).
    #[arg(long)]
    pub impute: Vec<String>,
    #[arg(long, conflicts_with = "impute")]
    pub no_impute: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn join_features_cmd(_ctx: &Ctx, a: &JoinFeaturesArgs) -> Result<()> {
    let schema = FeatureSchema::colorado();
    let layer = |p: &PathBuf, key: &str| {
        read_overlay_layer(&read_text(p)?, key, &schema)
            .with_context(|| format!("ingest: layer {}", p.display()))
    };
    let block_groups = layer(&a.block_groups, "geoid")?;
    let overlays = a
        .overlay
        .iter()
        .map(|p| layer(p, "id"))
        .collect::<Result<Vec<_>>>()?;
    let zips = a.zips.as_ref().map(|p| layer(p, "id")).transpose()?;
    let tracts = match &a.tracts {
        Some(p) => Some(read_tract_csv(&read_text(p)?).context("ingest: tract table")?),
        None => None,
    };
    let targets = match &a.targets {
        Some(p) => {
            let recs = read_deployment_csv(&read_text(p)?).context("deploy: reading targets")?;
            Some(
                recs.into_iter()
                    .map(|r| {
                        (
                            r.block_group_id,
                            (Some(r.pv_count_per_hh), r.pv_to_roof_ratio),
                        )
                    })
                    .collect::<BTreeMap<_, _>>(),
            )
        }
        None => None,
    };
    let impute: Vec<&str> = if a.no_impute {
        Vec::new()
    } else if a.impute.is_empty() {
        IMPUTED_FEATURES.to_vec()
    } else {
        a.impute.iter().map(String::as_str).collect()
    };
    let inputs = AssemblyInputs {
        block_groups: &block_groups,
        overlays: &overlays,
        zips: zips.as_ref(),
        tracts: tracts.as_ref(),
        targets: targets.as_ref(),
        impute: &impute,
    };
    let (table, report) = assemble_feature_table(&inputs).context("ingest: assembling features")?;
    for f in &report.flags {
        eprintln!("ingest: {f}");
    }
    write_text(&a.out, &write_feature_csv(&table))?;
    eprintln!(
        "joined {} block groups ({} flags)",
        table.records.len(),
        report.flags.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Per-column report CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn validate_cmd(_ctx: &Ctx, a: &ValidateArgs) -> Result<()> {
    let table = read_feature_csv(&read_text(&a.features)?).context("ingest: reading features")?;
    let report = validate_schema(&table);
    emit(a.out.as_deref(), &report.to_csv())?;
    if report.is_clean() {
        eprintln!("{} records, no range violations", report.records);
        Ok(())
    } else {
        Err(anyhow!(ValidationFailed(format!(
            "ingest: {} range violations in {} records",
            report.violations(),
            report.records
        ))))
    }
}
