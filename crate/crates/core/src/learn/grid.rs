use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelPreset;
use super::ensemble::{fit, TreeEnsemble};
use super::{metrics, split_dataset, Dataset, DatasetTag, LearnError, MetricsReport};

pub const COMPARISON_HEADER: &str = "Model,Dataset,Algorithm,MAE,RMSE,R2";

/// Metrics of one fitted grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub model_id: String,
    pub dataset: DatasetTag,
    pub algorithm: String,
    pub split_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Held-out metrics.
    pub test: MetricsReport,
    /// Metrics over train and test rows together.
    pub full: MetricsReport,
}

#[derive(Debug)]
pub struct GridCell {
    pub preset: ModelPreset,
    pub result: Result<(GridRow, TreeEnsemble), LearnError>,
}

#[derive(Debug)]
pub struct GridOutcome {
    pub cells: Vec<GridCell>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl GridOutcome {
    pub fn rows(&self) -> impl Iterator<Item = &GridRow> {
        self.cells
            .iter()
            .filter_map(|c| c.result.as_ref().ok().map(|r| &r.0))
    }

    pub fn errors(&self) -> impl Iterator<Item = (&str, &LearnError)> {
        self.cells.iter().filter_map(|c| {
            c.result
                .as_ref()
                .err()
                .map(|e| (c.preset.model_id.as_str(), e))
        })
    }

    /// Held-out metrics in the model-comparison layout.
    pub fn comparison_csv(&self) -> String {
        comparison_csv(&self.rows().cloned().collect::<Vec<_>>())
    }

    pub fn extended_csv(&self) -> String {
        extended_csv(&self.rows().cloned().collect::<Vec<_>>())
    }
}

/// Held-out metrics in the model-comparison column layout.
pub fn comparison_csv(rows: &[GridRow]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.model_id,
            r.dataset.label(),
            r.algorithm,
            r.test.mae,
            r.test.rmse,
            cell(r.test.r2)
        ));
    }
    out
}

/// Comparison table plus split provenance and full-sample metrics.
pub fn extended_csv(rows: &[GridRow]) -> String {
    let mut out = String::from(
        "Model,Dataset,Algorithm,split_seed,n_train,n_test,test_MAE,test_RMSE,test_R2,full_MAE,full_RMSE,full_R2\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.model_id,
            r.dataset.label(),
            r.algorithm,
            r.split_seed,
            r.n_train,
            r.n_test,
            r.test.mae,
            r.test.rmse,
            cell(r.test.r2),
            r.full.mae,
            r.full.rmse,
            cell(r.full.r2)
        ));
    }
    out
}

/// Fixed-width text model-comparison table with metrics to three decimals and
/// R² in percent.
pub fn comparison_text(rows: &[GridRow]) -> String {
    let mut out = format!(
        "{:<6} {:<34} {:<14} {:>8} {:>8} {:>8}\n",
        "Model", "Dataset", "Algorithm", "MAE", "RMSE", "R2 (%)"
    );
    for r in rows {
        let r2 = r
            .test
            .r2
            .map(|v| format!("{:.1}", 100.0 * v))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<6} {:<34} {:<14} {:>8.3} {:>8.3} {:>8}\n",
            r.model_id,
            r.dataset.label(),
            r.algorithm,
            r.test.mae,
            r.test.rmse,
            r2
        ));
    }
    out
}

fn run_cell(
    datasets: &[Dataset],
    preset: &ModelPreset,
    fractions: &[f64],
    split_seed: u64,
) -> Result<(GridRow, TreeEnsemble), LearnError> {
    let ds = datasets
        .iter()
        .find(|d| d.tag == Some(preset.dataset))
        .ok_or_else(|| LearnError::Dataset(format!("no {} dataset", preset.dataset.as_str())))?;
    let parts = split_dataset(ds, fractions, split_seed)?;
    let (train, test) = (&parts[0], &parts[parts.len() - 1]);
    let model = fit(train, &preset.config)?;
    let test_pred = model.predict_dataset(test)?;
    let full_pred = model.predict_dataset(ds)?;
    let row = GridRow {
        model_id: preset.model_id.clone(),
        dataset: preset.dataset,
        algorithm: preset.flavor.label().to_string(),
        split_seed,
        n_train: train.n(),
        n_test: test.n(),
        test: metrics(&test.y, &test_pred)?,
        full: metrics(&ds.y, &full_pred)?,
    };
    Ok((row, model))
}

/// Fits every preset on the dataset carrying its tag, training on the
/// first split part and scoring on the last. Failed cells keep their error
/// and the rest of the grid still runs.
pub fn run_experiment_grid(
    datasets: &[Dataset],
    presets: &[ModelPreset],
    fractions: &[f64],
    split_seed: u64,
) -> GridOutcome {
    let cells = presets
        .par_iter()
        .map(|p| GridCell {
            preset: p.clone(),
            result: run_cell(datasets, p, fractions, split_seed),
        })
        .collect();
    GridOutcome { cells }
}
