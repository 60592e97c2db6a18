//! Regression-tree ensembles (random forest, second-order gradient
//! boosting), fit metrics and the model-comparison grid.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FeatureTable, POLICY_FEATURES, TARGET_COUNT, TARGET_RATIO};
use crate::rng::rng_for;

mod config;
mod ensemble;
mod grid;
mod tree;

pub use config::{
    model_presets, Algorithm, Flavor, Growth, LearnerConfig, MaxFeatures, ModelPreset, ParamValue,
};
pub use ensemble::{
    fit, fit_gbdt, fit_random_forest, fit_tree, EnsembleKind, TreeEnsemble, SCHEMA_VERSION,
};
pub use grid::{
    comparison_csv, comparison_text, extended_csv, run_experiment_grid, GridCell, GridOutcome,
    GridRow, COMPARISON_HEADER,
};
pub use tree::{FlatTree, Node, Tree};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid learner config: {0}")]
    Config(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("feature {0:?} not found")]
    MissingFeature(String),
    #[error("invalid split fractions: {0}")]
    Split(String),
    #[error("model file: {0}")]
    Model(String),
}

/// Which of the four modeling tables a dataset is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetTag {
    #[serde(rename = "pv_count")]
    PvCount,
    #[serde(rename = "pv_count+policy")]
    PvCountPolicy,
    #[serde(rename = "pv_ratio")]
    PvRatio,
    #[serde(rename = "pv_ratio+policy")]
    PvRatioPolicy,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 4] = [
        Self::PvCount,
        Self::PvCountPolicy,
        Self::PvRatio,
        Self::PvRatioPolicy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PvCount => "pv_count",
            Self::PvCountPolicy => "pv_count+policy",
            Self::PvRatio => "pv_ratio",
            Self::PvRatioPolicy => "pv_ratio+policy",
        }
    }

    /// Label used in the model-comparison table.
    pub fn label(self) -> &'static str {
        match self {
            Self::PvCount => "PV count per HH",
            Self::PvCountPolicy => "PV count per HH + Energy policy",
            Self::PvRatio => "PV-to-roof ratio",
            Self::PvRatioPolicy => "PV-to-roof ratio + Energy policy",
        }
    }

    pub fn target(self) -> &'static str {
        match self {
            Self::PvCount | Self::PvCountPolicy => TARGET_COUNT,
            Self::PvRatio | Self::PvRatioPolicy => TARGET_RATIO,
        }
    }

    pub fn with_policy(self) -> bool {
        matches!(self, Self::PvCountPolicy | Self::PvRatioPolicy)
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

/// Dense numeric design matrix (row-major) with a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub names: Vec<String>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub ids: Vec<String>,
    pub tag: Option<DatasetTag>,
}

impl Dataset {
    pub fn new(names: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self, LearnError> {
        let n = y.len();
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::with_ids(names, x, y, ids)
    }

    pub fn with_ids(
        names: Vec<String>,
        x: Vec<f64>,
        y: Vec<f64>,
        ids: Vec<String>,
    ) -> Result<Self, LearnError> {
        let (n, p) = (y.len(), names.len());
        if n == 0 {
            return Err(LearnError::Dataset("no rows".into()));
        }
        if p == 0 {
            return Err(LearnError::Dataset("no features".into()));
        }
        if x.len() != n * p || ids.len() != n {
            return Err(LearnError::Dataset(format!(
                "shape mismatch: {} values for {n}x{p}",
                x.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(LearnError::Dataset("non-finite value".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(d) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(LearnError::Dataset(format!("duplicate feature {d:?}")));
        }
        Ok(Self {
            names,
            x,
            y,
            ids,
            tag: None,
        })
    }

    pub fn tagged(mut self, tag: DatasetTag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.x[i * self.p() + j]).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let p = self.p();
        let mut x = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            names: self.names.clone(),
            x,
            y: rows.iter().map(|&i| self.y[i]).collect(),
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            tag: self.tag,
        }
    }

    /// Rows of `table` with the target and every listed feature present.
    pub fn from_table(
        table: &FeatureTable,
        target: &str,
        features: &[String],
    ) -> Result<Self, LearnError> {
        let t = table
            .schema
            .target_index(target)
            .ok_or_else(|| LearnError::MissingFeature(target.to_string()))?;
        let cols = features
            .iter()
            .map(|f| {
                table
                    .schema
                    .feature_index(f)
                    .ok_or_else(|| LearnError::MissingFeature(f.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (mut x, mut y, mut ids) = (Vec::new(), Vec::new(), Vec::new());
        for r in &table.records {
            let Some(target) = r.targets[t] else { continue };
            let row: Option<Vec<f64>> = cols.iter().map(|&c| r.values[c]).collect();
            if let Some(row) = row {
                x.extend(row);
                y.push(target);
                ids.push(r.geoid.clone());
            }
        }
        Self::with_ids(features.to_vec(), x, y, ids)
    }

    /// One of the four modeling datasets: all schema predictors for the
    /// policy variants, all but the policy predictors otherwise.
    pub fn assemble(table: &FeatureTable, tag: DatasetTag) -> Result<Self, LearnError> {
        let features: Vec<String> = table
            .schema
            .features
            .iter()
            .map(|f| f.name.clone())
            .filter(|n| tag.with_policy() || !POLICY_FEATURES.contains(&n.as_str()))
            .collect();
        Ok(Self::from_table(table, tag.target(), &features)?.tagged(tag))
    }
}

const SPLIT_STREAM: u64 = 0x5711_7000;

/// Shuffled partition into parts of floor(fraction * n) rows, the last
/// part taking the remainder.
pub fn split_dataset(
    ds: &Dataset,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Dataset>, LearnError> {
    if fractions.len() < 2 || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(LearnError::Split(
            "need at least two fractions in (0, 1]".into(),
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(LearnError::Split(format!("fractions sum to {total}")));
    }
    let n = ds.n();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, SPLIT_STREAM));
    let mut sizes: Vec<usize> = fractions[..fractions.len() - 1]
        .iter()
        .map(|f| (f * n as f64 + 1e-9).floor() as usize)
        .collect();
    let used: usize = sizes.iter().sum();
    if used > n {
        return Err(LearnError::Split("parts exceed dataset".into()));
    }
    sizes.push(n - used);
    if sizes.contains(&0) {
        return Err(LearnError::Split(format!("empty part for n = {n}")));
    }
    let mut out = Vec::new();
    let mut start = 0;
    for s in sizes {
        out.push(ds.subset(&idx[start..start + s]));
        start += s;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the observed target has zero variance.
    pub r2: Option<f64>,
}

pub fn metrics(y: &[f64], yhat: &[f64]) -> Result<MetricsReport, LearnError> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(LearnError::Dataset(
            "metric inputs must be equal-length and non-empty".into(),
        ));
    }
    let n = y.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        abs += (a - b).abs();
        sq += (a - b) * (a - b);
    }
    let mean = y.iter().sum::<f64>() / n;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let r2 = (y.len() >= 2 && tss > 0.0).then(|| 1.0 - sq / tss);
    Ok(MetricsReport {
        n: y.len(),
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BlockGroupRecord, FeatureSchema};
    use proptest::prelude::*;

    fn toy(n: usize) -> Dataset {
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::new(vec!["a".into()], x.clone(), x).unwrap()
    }

    #[test]
    fn split_sizes() {
        let parts = split_dataset(&toy(10), &[0.8, 0.1, 0.1], 7).unwrap();
        assert_eq!(
            parts.iter().map(Dataset::n).collect::<Vec<_>>(),
            vec![8, 1, 1]
        );
        let parts = split_dataset(&toy(3441), &[0.8, 0.2], 7).unwrap();
        assert_eq!((parts[0].n(), parts[1].n()), (2752, 689));
        let mut all: Vec<f64> = parts.iter().flat_map(|d| d.y.clone()).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, toy(3441).y);
    }

    #[test]
    fn split_is_seeded() {
        let a = split_dataset(&toy(50), &[0.8, 0.2], 1).unwrap();
        let b = split_dataset(&toy(50), &[0.8, 0.2], 1).unwrap();
        let c = split_dataset(&toy(50), &[0.8, 0.2], 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].y, c[0].y);
    }

    #[test]
    fn split_errors() {
        assert!(split_dataset(&toy(3), &[0.8, 0.1, 0.1], 0).is_err());
        assert!(split_dataset(&toy(10), &[0.5, 0.4], 0).is_err());
    }

    #[test]
    fn metric_cases() {
        let m = metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, Some(1.0)));
        let m = metrics(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(m.r2, Some(0.0));
        let m = metrics(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert_eq!(m.mae, 1.5);
        assert!((m.rmse - 2.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(metrics(&[1.0, 1.0], &[1.0, 2.0]).unwrap().r2, None);
    }

    #[test]
    fn assembles_policy_and_plain_datasets() {
        let schema = FeatureSchema::colorado();
        let mut t = FeatureTable::new(schema.clone());
        for i in 0..3 {
            let mut r = BlockGroupRecord::empty(format!("g{i}"), &schema);
            for v in r.values.iter_mut() {
                *v = Some(i as f64);
            }
            r.targets = vec![Some(0.1), Some(0.01)];
            t.records.push(r);
        }
        let mandate = schema.require("Solar Mandate").unwrap();
        t.records[1].values[mandate] = None;
        let plain = Dataset::assemble(&t, DatasetTag::PvCount).unwrap();
        let policy = Dataset::assemble(&t, DatasetTag::PvRatioPolicy).unwrap();
        assert_eq!((plain.n(), plain.p()), (3, 37));
        assert_eq!((policy.n(), policy.p()), (2, 43));
        assert_eq!(policy.y, vec![0.01, 0.01]);
        assert_eq!(policy.ids, vec!["g0", "g2"]);
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
            let (y, yhat): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let m = metrics(&y, &yhat).unwrap();
            prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
            if let Some(r2) = m.r2 {
                prop_assert!(r2 <= 1.0);
            }
        }
    }
}
