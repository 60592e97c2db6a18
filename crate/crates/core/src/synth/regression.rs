use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::ingest::{
    BlockGroupRecord, FeatureSchema, FeatureSpec, FeatureTable, Granularity, POLICY_FEATURES,
    SYNTH_TARGET,
};
use crate::learn::Dataset;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    /// Five Gaussian predictors, `x2` correlated with `x1`, `x5` inert.
    Linear,
    /// Ten uniform predictors, five of them active through the Friedman #1 surface.
    Friedman,
    /// Income moderated by race shares, with home value tied to income.
    IncomeRace,
}

impl RegressionKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Self::Linear),
            "friedman" => Some(Self::Friedman),
            "income_race" | "income-race" => Some(Self::IncomeRace),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthRegressionSpec {
    pub kind: RegressionKind,
    pub n: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRegression {
    pub dataset: Dataset,
    /// Generating linear terms in model-spec syntax ("Constant", "a", "a*b");
    /// empty for the nonlinear surface.
    pub coefficients: Vec<(String, f64)>,
}

impl SynthRegression {
    /// The generating terms as a model spec, without the constant.
    pub fn spec_text(&self) -> Option<String> {
        if self.coefficients.is_empty() {
            return None;
        }
        let terms: Vec<&str> = self
            .coefficients
            .iter()
            .map(|(t, _)| t.as_str())
            .filter(|t| *t != "Constant")
            .collect();
        Some(terms.join(","))
    }
}

const LINEAR: [(&str, f64); 6] = [
    ("Constant", 1.0),
    ("x1", 3.0),
    ("x2", 1.0),
    ("x3", 0.5),
    ("x4", -2.0),
    ("x5", 0.0),
];

const INCOME_RACE: [(&str, f64); 9] = [
    ("Constant", 0.02),
    ("income", 0.004),
    ("asian", 0.03),
    ("hispanic", -0.01),
    ("black", -0.01),
    ("home_value", 0.002),
    ("income*asian", 0.01),
    ("income*hispanic", -0.004),
    ("income*black", -0.002),
];

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn linear_row(rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let z: [f64; 5] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let x = vec![z[0], 0.6 * z[0] + 0.8 * z[1], z[2], z[3], z[4]];
    let y = LINEAR[0].1
        + LINEAR[1..]
            .iter()
            .zip(&x)
            .map(|((_, b), v)| b * v)
            .sum::<f64>();
    (x, y)
}

fn friedman_row(rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let x: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
    let y = 10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5).powi(2)
        + 10.0 * x[3]
        + 5.0 * x[4]
        + 4.0 * x[5] * x[6];
    (x, y)
}

fn income_race_row(rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    // Income in 10k USD, home value in 100k USD.
    let income = rng.random_range(1.5..25.0);
    let asian = rng.random_range(0.0..0.4);
    let hispanic: f64 = rng.random_range(0.0..0.9);
    let black = rng.random_range(0.0..(0.95 - hispanic).min(0.6));
    let noise: f64 = StandardNormal.sample(rng);
    let home_value = (0.9 * income + 2.0 * noise).max(0.1);
    let x = vec![income, asian, hispanic, black, home_value];
    let b: Vec<f64> = INCOME_RACE.iter().map(|(_, c)| *c).collect();
    let y = b[0]
        + b[1] * income
        + b[2] * asian
        + b[3] * hispanic
        + b[4] * black
        + b[5] * home_value
        + b[6] * income * asian
        + b[7] * income * hispanic
        + b[8] * income * black;
    (x, y)
}

pub fn generate_regression(spec: &SynthRegressionSpec) -> Result<SynthRegression, SynthError> {
    if spec.n < 2 {
        return Err(SynthError::Spec("n must be at least 2".into()));
    }
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(SynthError::Spec("noise_sd must be non-negative".into()));
    }
    let (cols, row, coefs): (
        Vec<String>,
        fn(&mut ChaCha8Rng) -> (Vec<f64>, f64),
        &[(&str, f64)],
    ) = match spec.kind {
        RegressionKind::Linear => (names(&["x1", "x2", "x3", "x4", "x5"]), linear_row, &LINEAR),
        RegressionKind::Friedman => (
            (1..=10).map(|i| format!("x{i}")).collect(),
            friedman_row,
            &[],
        ),
        RegressionKind::IncomeRace => (
            names(&["income", "asian", "hispanic", "black", "home_value"]),
            income_race_row,
            &INCOME_RACE,
        ),
    };
    let mut rng = rng_for(spec.seed, 0);
    let noise = Normal::new(0.0, spec.noise_sd).expect("checked sd");
    let mut x = Vec::with_capacity(spec.n * cols.len());
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let (r, v) = row(&mut rng);
        x.extend(r);
        y.push(
            v + if spec.noise_sd > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            },
        );
    }
    let ids = (0..spec.n).map(|i| format!("s{i:06}")).collect();
    let dataset =
        Dataset::with_ids(cols, x, y, ids).map_err(|e| SynthError::Spec(e.to_string()))?;
    Ok(SynthRegression {
        dataset,
        coefficients: coefs.iter().map(|(t, c)| (t.to_string(), *c)).collect(),
    })
}

/// Table with unbounded features and the synthetic target column.
pub fn dataset_to_table(ds: &Dataset) -> Result<FeatureTable, SynthError> {
    let features = ds.names.iter().map(|n| FeatureSpec::unbounded(n)).collect();
    let schema = FeatureSchema::new(features, vec![FeatureSpec::unbounded(SYNTH_TARGET)])
        .map_err(|e| SynthError::Spec(e.to_string()))?;
    let mut table = FeatureTable::new(schema);
    for i in 0..ds.n() {
        table.records.push(BlockGroupRecord {
            geoid: ds.ids[i].clone(),
            values: ds.row(i).iter().map(|v| Some(*v)).collect(),
            targets: vec![Some(ds.y[i])],
        });
    }
    Ok(table)
}

/// Stand-in block-group table: every predictor inside its legal range,
/// policy columns null together for a `policy_null_fraction` share of rows,
/// and both targets driven by a few predictors plus noise.
pub fn generate_feature_table(
    n: usize,
    seed: u64,
    policy_null_fraction: f64,
) -> Result<FeatureTable, SynthError> {
    if n == 0 || n > 10_000_000_000 {
        return Err(SynthError::Spec("n must be positive".into()));
    }
    if !(0.0..=1.0).contains(&policy_null_fraction) {
        return Err(SynthError::Spec(
            "policy_null_fraction must be in [0, 1]".into(),
        ));
    }
    let schema = FeatureSchema::colorado();
    let mut table = FeatureTable::new(schema.clone());
    let idx = |name: &str| schema.feature_index(name).expect("colorado feature");
    let driver = [
        (idx("Median HH Income"), 0.35),
        (idx("Solar Radiation"), 0.2),
        (idx("% Bachelors +"), 0.25),
        (idx("% Renters"), -0.3),
        (idx("Avg. No. Bedrooms"), 0.15),
    ];
    let mandate = idx("Solar Mandate");
    for i in 0..n {
        let mut rng = rng_for(seed, i as u64);
        let mut rec = BlockGroupRecord::empty(format!("08{i:010}"), &schema);
        let null_policy = rng.random::<f64>() < policy_null_fraction;
        let mut unit = vec![0.0; schema.features.len()];
        for (j, f) in schema.features.iter().enumerate() {
            let u: f64 = rng.random();
            unit[j] = u;
            let v = match f.unit.as_str() {
                "indicator" => (u < 0.3) as u8 as f64,
                "code" | "year" => (f.min + u * (f.max - f.min + 1.0)).floor().min(f.max),
                _ => f.min + u * (f.max - f.min),
            };
            let is_policy = f.granularity == Granularity::Jurisdiction
                && POLICY_FEATURES.contains(&f.name.as_str());
            rec.values[j] = (!(is_policy && null_policy)).then_some(v);
        }
        let signal: f64 = driver.iter().map(|&(j, w)| w * unit[j]).sum::<f64>()
            + 0.1 * rec.values[mandate].unwrap_or(0.0);
        for (t, spec) in schema.targets.iter().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = (0.3 + signal + 0.08 * e).clamp(0.0, 1.0);
            rec.targets[t] = Some(spec.min + z * (spec.max - spec.min));
        }
        table.records.push(rec);
    }
    Ok(table)
}
