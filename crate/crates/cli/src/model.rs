use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use pvmap_core::explain::{
    ame, ame_default_grid, ame_to_csv, explain_dataset, fis_table, ols_fit, regression_table,
    shap_summary, FisModel, LinearModelSpec, OlsFit,
};
use pvmap_core::ingest::{
    read_feature_csv, validate_schema, FeatureTable, TARGET_COUNT, TARGET_RATIO,
};
use pvmap_core::learn::{
    comparison_csv, comparison_text, extended_csv, model_presets, run_experiment_grid, Dataset,
    DatasetTag, GridRow, TreeEnsemble,
};
use serde::{Deserialize, Serialize};

use crate::io::{emit, read_text, to_json, write_manifest, write_text, ValidationFailed};
use crate::Ctx;

/// Grid results saved by `train` and read by `explain` and `report`.
#[derive(Debug, Serialize, Deserialize)]
pub struct GridFile {
    pub split_seed: u64,
    pub fractions: Vec<f64>,
    pub rows: Vec<GridRow>,
    /// (model id, message) for presets that failed.
    pub errors: Vec<(String, String)>,
}

fn read_table(path: &Path) -> Result<FeatureTable> {
    read_feature_csv(&read_text(path)?)
        .with_context(|| format!("ingest: reading {}", path.display()))
}

fn read_grid(dir: &Path) -> Result<GridFile> {
    let p = dir.join("grid.json");
    serde_json::from_str(&read_text(&p)?).with_context(|| format!("learn: parsing {}", p.display()))
}

fn model_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("models").join(format!("{id}.json"))
}

fn parse_tag(s: &str) -> Result<DatasetTag> {
    DatasetTag::parse(s).ok_or_else(|| {
        let names: Vec<&str> = DatasetTag::ALL.iter().map(|t| t.as_str()).collect();
        anyhow!(ValidationFailed(format!(
            "unknown dataset {s:?}; expected one of {}",
            names.join(", ")
        )))
    })
}

/// `pv_count` and `pv_ratio` name the deployment targets; anything else is a
/// literal target column.
fn resolve_target(s: &str) -> &str {
    match s {
        "pv_count" => TARGET_COUNT,
        "pv_ratio" => TARGET_RATIO,
        other => other,
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Train even when range validation fails.
    #[arg(long)]
    pub force: bool,
    /// Comma-separated model ids (M1..M16); all by default.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long)]
    pub max_estimators: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

pub fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let table = read_table(&a.features)?;
    let report = validate_schema(&table);
    if !report.is_clean() {
        let msg = format!("ingest: {} range violations", report.violations());
        if !a.force {
            return Err(
                ValidationFailed(format!("{msg}; rerun with --force to train anyway")).into(),
            );
        }
        eprintln!("{msg}; training anyway (--force)");
    }
    let learn = &ctx.cfg.learn;
    let wanted = if a.models.is_empty() {
        &learn.models
    } else {
        &a.models
    };
    let mut presets = model_presets();
    if !wanted.is_empty() {
        if let Some(bad) = wanted
            .iter()
            .find(|w| !presets.iter().any(|p| &p.model_id == *w))
        {
            return Err(ValidationFailed(format!("learn: unknown model id {bad:?}")).into());
        }
        presets.retain(|p| wanted.contains(&p.model_id));
    }
    if let Some(cap) = a.max_estimators.or(learn.max_estimators) {
        for p in &mut presets {
            p.config.n_estimators = p.config.n_estimators.min(cap);
        }
    }
    let mut datasets = Vec::new();
    for tag in DatasetTag::ALL {
        if presets.iter().any(|p| p.dataset == tag) {
            datasets.push(
                Dataset::assemble(&table, tag)
                    .with_context(|| format!("learn: dataset {}", tag.as_str()))?,
            );
        }
    }
    let split_seed = a.split_seed.or(learn.split_seed).unwrap_or(ctx.seed);
    let outcome = run_experiment_grid(&datasets, &presets, &learn.fractions, split_seed);
    for cell in &outcome.cells {
        if let Ok((_, model)) = &cell.result {
            write_text(
                &model_path(&a.out_dir, &cell.preset.model_id),
                &model.to_json(),
            )?;
        }
    }
    let rows: Vec<GridRow> = outcome.rows().cloned().collect();
    let errors: Vec<(String, String)> = outcome
        .errors()
        .map(|(id, e)| (id.to_string(), e.to_string()))
        .collect();
    let grid = GridFile {
        split_seed,
        fractions: learn.fractions.clone(),
        rows,
        errors,
    };
    write_text(&a.out_dir.join("grid.json"), &to_json(&grid))?;
    write_text(
        &a.out_dir.join("comparison.csv"),
        &comparison_csv(&grid.rows),
    )?;
    write_text(
        &a.out_dir.join("comparison_extended.csv"),
        &extended_csv(&grid.rows),
    )?;
    let seeds: Vec<(String, u64)> = presets
        .iter()
        .map(|p| (p.model_id.clone(), p.config.seed))
        .collect();
    write_manifest(
        &a.out_dir,
        "train",
        ctx.seed,
        serde_json::json!({
            "split_seed": split_seed,
            "fractions": learn.fractions,
            "model_seeds": seeds,
            "datasets": datasets.iter().map(|d| (d.tag.map(|t| t.as_str()), d.n(), d.p())).collect::<Vec<_>>(),
        }),
    )?;
    if !grid.errors.is_empty() {
        for (id, e) in &grid.errors {
            eprintln!("learn: {id}: {e}");
        }
        bail!(
            "learn: {} of {} models failed",
            grid.errors.len(),
            presets.len()
        );
    }
    eprintln!(
        "trained {} models (split seed {split_seed})",
        grid.rows.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Output directory of `train`.
    #[arg(long)]
    pub train_dir: PathBuf,
    /// pv_count, pv_count+policy, pv_ratio or pv_ratio+policy.
    #[arg(long)]
    pub dataset: String,
    /// Model explained with SHAP; the best held-out R² by default.
    #[arg(long)]
    pub shap_model: Option<String>,
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn explain_cmd(ctx: &Ctx, a: &ExplainArgs) -> Result<()> {
    let tag = parse_tag(&a.dataset)?;
    let grid = read_grid(&a.train_dir)?;
    let table = read_table(&a.features)?;
    let ds = Dataset::assemble(&table, tag).context("learn: dataset")?;
    let rows: Vec<&GridRow> = grid.rows.iter().filter(|r| r.dataset == tag).collect();
    if rows.is_empty() {
        return Err(
            ValidationFailed(format!("explain: no trained models for {}", tag.as_str())).into(),
        );
    }
    let load = |id: &str| -> Result<TreeEnsemble> {
        let p = model_path(&a.train_dir, id);
        TreeEnsemble::from_json(&read_text(&p)?)
            .with_context(|| format!("learn: model {}", p.display()))
    };
    let mut fis_models = Vec::new();
    for r in &rows {
        match r.test.r2 {
            Some(r2) if r2 > 0.0 => fis_models.push(FisModel::from_ensemble(
                &r.model_id,
                &load(&r.model_id)?,
                r2,
            )),
            other => eprintln!(
                "explain: {} skipped for FIS (held-out R² {other:?})",
                r.model_id
            ),
        }
    }
    if fis_models.is_empty() {
        return Err(ValidationFailed("explain: no model with positive held-out R²".into()).into());
    }
    let fis = fis_table(&fis_models, Some(&ds)).context("explain: FIS")?;
    write_text(&a.out_dir.join("fis.csv"), &fis.to_csv())?;

    let shap_id = match &a.shap_model {
        Some(id) => id.clone(),
        None => rows
            .iter()
            .max_by(|x, y| {
                x.test
                    .r2
                    .unwrap_or(f64::MIN)
                    .total_cmp(&y.test.r2.unwrap_or(f64::MIN))
            })
            .map(|r| r.model_id.clone())
            .expect("non-empty rows"),
    };
    let model = load(&shap_id)?;
    let expl = explain_dataset(&model, &ds).context("explain: SHAP")?;
    let cols = model
        .column_map(&ds.names)
        .context("explain: SHAP columns")?;
    let values: Vec<Vec<f64>> = (0..ds.n())
        .map(|i| cols.iter().map(|&j| ds.row(i)[j]).collect())
        .collect();
    let top = a.top.unwrap_or(ctx.cfg.explain.shap_top);
    let summary = shap_summary(&model.feature_names, &expl, &values, Some(top))
        .context("explain: SHAP summary")?;
    write_text(&a.out_dir.join("shap_points.csv"), &summary.points_csv())?;
    write_text(&a.out_dir.join("shap_ranking.csv"), &summary.ranking_csv())?;
    write_manifest(
        &a.out_dir,
        "explain",
        ctx.seed,
        serde_json::json!({
            "dataset": tag.as_str(),
            "fis_models": fis_models.iter().map(|m| (&m.model_id, m.r2)).collect::<Vec<_>>(),
            "shap_model": shap_id,
            "shap_top": top,
            "split_seed": grid.split_seed,
        }),
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct OlsArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// pv_count, pv_ratio or a target column name.
    #[arg(long)]
    pub target: String,
    /// `name=terms`, terms comma-separated as `a`, `a^2` or `a*b`; repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn fit_named(
    table: &FeatureTable,
    target: &str,
    text: &str,
    intercept: bool,
) -> Result<(LinearModelSpec, Dataset, OlsFit)> {
    let spec = LinearModelSpec::parse(text, intercept)
        .map_err(|e| ValidationFailed(format!("explain: {e}")))?;
    let ds = Dataset::from_table(table, resolve_target(target), &spec.features())
        .context("learn: dataset")?;
    let fit = ols_fit(&ds, &spec).context("explain: OLS")?;
    Ok((spec, ds, fit))
}

pub fn ols_cmd(ctx: &Ctx, a: &OlsArgs) -> Result<()> {
    let table = read_table(&a.features)?;
    let mut fits = Vec::new();
    for m in &a.models {
        let (name, terms) = m
            .split_once('=')
            .ok_or_else(|| ValidationFailed(format!("explain: model {m:?} is not name=terms")))?;
        let (_, _, fit) = fit_named(&table, &a.target, terms, !a.no_intercept)?;
        write_text(&a.out_dir.join(format!("ols_{name}.csv")), &fit.to_csv())?;
        fits.push((name.to_string(), fit));
    }
    let refs: Vec<(&str, &OlsFit)> = fits.iter().map(|(n, f)| (n.as_str(), f)).collect();
    write_text(
        &a.out_dir.join("regression_table.txt"),
        &regression_table(&refs),
    )?;
    write_manifest(
        &a.out_dir,
        "ols",
        ctx.seed,
        serde_json::json!({ "target": resolve_target(&a.target), "models": a.models, "intercept": !a.no_intercept }),
    )
}

#[derive(Debug, Args)]
pub struct AmeArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Model terms as for `ols`.
    #[arg(long)]
    pub spec: String,
    #[arg(long)]
    pub focal: String,
    /// Repeatable; one AME curve per moderator.
    #[arg(long = "moderator", required = true)]
    pub moderators: Vec<String>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn ame_cmd(ctx: &Ctx, a: &AmeArgs) -> Result<()> {
    let table = read_table(&a.features)?;
    let (_, ds, fit) = fit_named(&table, &a.target, &a.spec, !a.no_intercept)?;
    let points = a.points.unwrap_or(ctx.cfg.explain.ame_points);
    let mut reports = Vec::new();
    for m in &a.moderators {
        let grid = ame_default_grid(&ds, m, points).context("explain: AME grid")?;
        reports.push(ame(&fit, &ds, &a.focal, m, &grid).context("explain: AME")?);
    }
    emit(a.out.as_deref(), &ame_to_csv(&reports))
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of `train`.
    #[arg(long)]
    pub train_dir: PathBuf,
    /// Held-out metrics in the model-comparison layout (default).
    #[arg(long)]
    pub comparison: bool,
    /// Comparison table with split seed, sizes and full-sample metrics.
    #[arg(long, conflicts_with = "comparison")]
    pub extended: bool,
    /// Fixed-width text instead of CSV.
    #[arg(long, conflicts_with = "extended")]
    pub text: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn report_cmd(_ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    let grid = read_grid(&a.train_dir)?;
    let text = if a.extended {
        extended_csv(&grid.rows)
    } else if a.text {
        comparison_text(&grid.rows)
    } else {
        comparison_csv(&grid.rows)
    };
    emit(a.out.as_deref(), &text)
}
