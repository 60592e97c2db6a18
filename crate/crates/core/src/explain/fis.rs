use statrs::distribution::{ContinuousCDF, StudentsT};

use super::ExplainError;
use crate::learn::{Dataset, TreeEnsemble};

/// Min-max scaled importances of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardized {
    pub scores: Vec<f64>,
    /// Set when the scaling is undefined: a single feature (scored 1) or
    /// all gains equal (all scored 0).
    pub degenerate: bool,
}

pub fn standardize_fis(gains: &[f64]) -> Standardized {
    if gains.len() == 1 {
        return Standardized {
            scores: vec![1.0],
            degenerate: true,
        };
    }
    let lo = gains.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if gains.is_empty() || !(hi > lo) {
        return Standardized {
            scores: vec![0.0; gains.len()],
            degenerate: true,
        };
    }
    Standardized {
        scores: gains.iter().map(|g| (g - lo) / (hi - lo)).collect(),
        degenerate: false,
    }
}

/// Importance record of one fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FisModel {
    pub model_id: String,
    /// Aggregation weight (the model's R²).
    pub r2: f64,
    pub features: Vec<String>,
    /// Total split gain per feature.
    pub raw: Vec<f64>,
    pub standardized: Standardized,
}

impl FisModel {
    pub fn new(model_id: impl Into<String>, r2: f64, features: Vec<String>, raw: Vec<f64>) -> Self {
        let standardized = standardize_fis(&raw);
        Self {
            model_id: model_id.into(),
            r2,
            features,
            raw,
            standardized,
        }
    }

    pub fn from_ensemble(model_id: impl Into<String>, model: &TreeEnsemble, r2: f64) -> Self {
        Self::new(
            model_id,
            r2,
            model.feature_names.clone(),
            model.feature_gains(),
        )
    }
}

/// Per-model score columns aligned to the first model's feature order.
fn aligned(models: &[FisModel]) -> Result<Vec<Vec<f64>>, ExplainError> {
    let first = models.first().ok_or(ExplainError::Empty)?;
    let mut cols = Vec::new();
    for m in models {
        if !(m.r2 > 0.0 && m.r2.is_finite()) {
            return Err(ExplainError::Weight {
                model: m.model_id.clone(),
                weight: m.r2,
            });
        }
        let mismatch = || ExplainError::FeatureMismatch(first.model_id.clone(), m.model_id.clone());
        if m.features.len() != first.features.len() {
            return Err(mismatch());
        }
        let col = first
            .features
            .iter()
            .map(|f| {
                m.features
                    .iter()
                    .position(|g| g == f)
                    .map(|j| m.standardized.scores[j])
                    .ok_or_else(mismatch)
            })
            .collect::<Result<Vec<_>, _>>()?;
        cols.push(col);
    }
    Ok(cols)
}

fn weighted(models: &[FisModel], cols: &[Vec<f64>]) -> Vec<f64> {
    let total: f64 = models.iter().map(|m| m.r2).sum();
    (0..cols[0].len())
        .map(|j| {
            models
                .iter()
                .zip(cols)
                .map(|(m, c)| m.r2 * c[j])
                .sum::<f64>()
                / total
        })
        .collect()
}

fn ranking(features: &[String], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// R²-weighted mean of the standardized scores, sorted descending (ties
/// keep the first model's feature order).
pub fn aggregate_fis(models: &[FisModel]) -> Result<Vec<(String, f64)>, ExplainError> {
    let cols = aligned(models)?;
    let agg = weighted(models, &cols);
    let names = &models[0].features;
    Ok(ranking(names, &agg)
        .into_iter()
        .map(|j| (names[j].clone(), agg[j]))
        .collect())
}

/// Pearson correlation with the target and its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
}

/// One entry per feature of `ds`; `None` for constant columns.
pub fn bivariate_correlations(ds: &Dataset) -> Vec<Option<Correlation>> {
    let n = ds.n() as f64;
    let my = ds.y.iter().sum::<f64>() / n;
    (0..ds.p())
        .map(|j| {
            let x = ds.column(j);
            let mx = x.iter().sum::<f64>() / n;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (a, b) in x.iter().zip(&ds.y) {
                sxy += (a - mx) * (b - my);
                sxx += (a - mx) * (a - mx);
                syy += (b - my) * (b - my);
            }
            if !(sxx > 0.0 && syy > 0.0) || ds.n() < 3 {
                return None;
            }
            let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
            let df = n - 2.0;
            let p = if r.abs() >= 1.0 {
                0.0
            } else {
                let t = r * (df / (1.0 - r * r)).sqrt();
                let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
                2.0 * (1.0 - dist.cdf(t.abs()))
            };
            Some(Correlation { r, p })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisRow {
    pub feature: String,
    pub aggregate: f64,
    /// Standardized score in each model, in model order.
    pub per_model: Vec<f64>,
    pub correlation: Option<Correlation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisTable {
    pub model_ids: Vec<String>,
    pub rows: Vec<FisRow>,
}

/// Aggregated importance table, optionally annotated with each feature's
/// correlation with the target of `reference`.
pub fn fis_table(
    models: &[FisModel],
    reference: Option<&Dataset>,
) -> Result<FisTable, ExplainError> {
    let cols = aligned(models)?;
    let agg = weighted(models, &cols);
    let names = &models[0].features;
    let corr: Vec<Option<Correlation>> = match reference {
        Some(ds) => {
            let all = bivariate_correlations(ds);
            names
                .iter()
                .map(|f| ds.feature_index(f).and_then(|j| all[j]))
                .collect()
        }
        None => vec![None; names.len()],
    };
    let rows = ranking(names, &agg)
        .into_iter()
        .map(|j| FisRow {
            feature: names[j].clone(),
            aggregate: agg[j],
            per_model: cols.iter().map(|c| c[j]).collect(),
            correlation: corr[j],
        })
        .collect();
    Ok(FisTable {
        model_ids: models.iter().map(|m| m.model_id.clone()).collect(),
        rows,
    })
}

impl FisTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["feature".to_string(), "aggregate".to_string()];
        header.extend(self.model_ids.iter().cloned());
        header.extend(["correlation".to_string(), "p_value".to_string()]);
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.feature.clone(), r.aggregate.to_string()];
            rec.extend(r.per_model.iter().map(f64::to_string));
            match r.correlation {
                Some(c) => rec.extend([c.r.to_string(), c.p.to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn standardize_cases() {
        let s = standardize_fis(&[10.0, 5.0, 0.0]);
        assert_eq!((s.scores, s.degenerate), (vec![1.0, 0.5, 0.0], false));
        let s = standardize_fis(&[3.0, 3.0]);
        assert_eq!((s.scores, s.degenerate), (vec![0.0, 0.0], true));
        let s = standardize_fis(&[7.0]);
        assert_eq!((s.scores, s.degenerate), (vec![1.0], true));
    }

    #[test]
    fn weighted_aggregate_by_hand() {
        let m1 = FisModel::new("m1", 0.5, names(&["a", "b"]), vec![1.0, 0.0]);
        let m2 = FisModel::new("m2", 0.25, names(&["a", "b"]), vec![0.0, 1.0]);
        let agg = aggregate_fis(&[m1, m2]).unwrap();
        assert_eq!(agg[0].0, "a");
        assert!((agg[0].1 - 0.5 / 0.75).abs() < 1e-15);
        assert!((agg[1].1 - 0.25 / 0.75).abs() < 1e-15);
    }

    #[test]
    fn hand_worked_three_feature_example() {
        // m1 scores {1, .5, 0}, m2 {0, 1, .25}; weights .6 and .2
        let m1 = FisModel::new("m1", 0.6, names(&["a", "b", "c"]), vec![10.0, 5.0, 0.0]);
        let m2 = FisModel::new("m2", 0.2, names(&["a", "b", "c"]), vec![2.0, 6.0, 3.0]);
        let agg = aggregate_fis(&[m1, m2]).unwrap();
        let want: [(&str, f64); 3] = [("b", 0.625), ("a", 0.75), ("c", 0.0625)];
        let mut want = want.to_vec();
        want.sort_by(|x, y| y.1.total_cmp(&x.1));
        for ((n, v), (wn, wv)) in agg.iter().zip(want) {
            assert_eq!(n, wn);
            assert!((v - wv).abs() < 1e-15);
        }
    }

    #[test]
    fn feature_order_may_differ_but_sets_must_match() {
        let m1 = FisModel::new("m1", 0.5, names(&["a", "b"]), vec![1.0, 0.0]);
        let m2 = FisModel::new("m2", 0.5, names(&["b", "a"]), vec![0.0, 1.0]);
        let agg = aggregate_fis(&[m1.clone(), m2]).unwrap();
        assert_eq!(agg, vec![("a".to_string(), 1.0), ("b".to_string(), 0.0)]);
        let m3 = FisModel::new("m3", 0.5, names(&["a", "z"]), vec![0.0, 1.0]);
        assert!(matches!(
            aggregate_fis(&[m1.clone(), m3]),
            Err(ExplainError::FeatureMismatch(..))
        ));
        let bad = FisModel::new("m4", 0.0, names(&["a", "b"]), vec![0.0, 1.0]);
        assert!(matches!(
            aggregate_fis(&[m1, bad]),
            Err(ExplainError::Weight { .. })
        ));
        assert!(matches!(aggregate_fis(&[]), Err(ExplainError::Empty)));
    }

    #[test]
    fn correlation_and_csv() {
        let ds = Dataset::new(
            names(&["up", "flat", "down"]),
            vec![1.0, 5.0, 3.0, 2.0, 5.0, 2.0, 3.0, 5.0, 1.5, 4.0, 5.0, 0.0],
            vec![1.0, 2.0, 3.0, 4.0],
        )
        .unwrap();
        let c = bivariate_correlations(&ds);
        assert!((c[0].unwrap().r - 1.0).abs() < 1e-12);
        assert!(c[1].is_none());
        assert!(c[2].unwrap().r < -0.9);
        let m = FisModel::new(
            "M1",
            0.4,
            names(&["up", "flat", "down"]),
            vec![3.0, 0.0, 1.0],
        );
        let t = fis_table(&[m], Some(&ds)).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("feature,aggregate,M1,correlation,p_value\nup,1,1,"));
        assert!(csv.contains("\nflat,0,0,,\n"));
    }

    proptest! {
        #[test]
        fn weight_rescaling_invariance(
            s in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 4), 1..5),
            w in prop::collection::vec(0.01f64..1.0, 5),
            k in 0.1f64..10.0,
        ) {
            let f = names(&["a", "b", "c", "d"]);
            let models: Vec<FisModel> = s.iter().zip(&w).enumerate()
                .map(|(i, (g, r))| FisModel::new(format!("m{i}"), *r, f.clone(), g.clone())).collect();
            let scaled: Vec<FisModel> = models.iter().map(|m| FisModel { r2: m.r2 * k, ..m.clone() }).collect();
            let a = aggregate_fis(&models).unwrap();
            let b = aggregate_fis(&scaled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.1 - y.1).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&x.1));
            }
        }

        #[test]
        fn standardization_affine_invariance(g in prop::collection::vec(-1e3f64..1e3, 2..10), a in 0.01f64..100.0, b in -1e3f64..1e3) {
            let s1 = standardize_fis(&g);
            let moved: Vec<f64> = g.iter().map(|v| a * v + b).collect();
            let s2 = standardize_fis(&moved);
            if !s1.degenerate && !s2.degenerate {
                for (x, y) in s1.scores.iter().zip(&s2.scores) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
                let lo = s1.scores.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = s1.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!((lo, hi), (0.0, 1.0));
            }
        }
    }
}
