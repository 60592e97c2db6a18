use serde::{Deserialize, Serialize};

use super::{DatasetTag, LearnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    RandomForest,
    Gbdt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    DepthWise,
    LeafWise,
}

/// Features tried at each split of a random-forest tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    /// ceil(sqrt(p)).
    Sqrt,
    /// ceil(fraction * p).
    Fraction(f64),
}

impl MaxFeatures {
    pub fn count(self, p: usize) -> usize {
        let k = match self {
            Self::All => p,
            Self::Sqrt => (p as f64).sqrt().ceil() as usize,
            Self::Fraction(f) => (f * p as f64).ceil() as usize,
        };
        k.clamp(1, p.max(1))
    }
}

/// Unified hyperparameters for both ensemble families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub growth: Growth,
    pub learning_rate: f64,
    pub n_estimators: usize,
    /// `None` is unlimited.
    pub max_depth: Option<usize>,
    /// Leaf cap; `None` is unlimited.
    pub num_leaves: Option<usize>,
    /// Fraction of features drawn once per tree.
    pub feature_fraction: f64,
    /// Per-split feature sampling (random forest).
    pub max_features: MaxFeatures,
    /// Row fraction drawn without replacement every `bagging_freq` rounds
    /// (boosting; `bagging_freq` 0 disables it).
    pub bagging_fraction: f64,
    pub bagging_freq: usize,
    /// Bootstrap rows per tree (random forest).
    pub bootstrap: bool,
    pub reg_lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Histogram bins per feature; 0 means one candidate per distinct value.
    pub max_bin: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Initial boosting prediction; `None` starts from the training mean.
    pub base_score: Option<f64>,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Flavor::XgBoost.defaults()
    }
}

/// A scalar parameter value as found in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Num(f64),
    Text(String),
}

impl ParamValue {
    fn num(&self, key: &str) -> Result<f64, LearnError> {
        match self {
            Self::Num(v) => Ok(*v),
            Self::Text(s) => s
                .trim()
                .parse()
                .map_err(|_| LearnError::Config(format!("{key}: expected a number, got {s:?}"))),
            Self::Bool(_) => Err(LearnError::Config(format!("{key}: expected a number"))),
        }
    }

    fn count(&self, key: &str) -> Result<usize, LearnError> {
        let v = self.num(key)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(LearnError::Config(format!(
                "{key}: expected a non-negative integer, got {v}"
            )));
        }
        Ok(v as usize)
    }

    fn flag(&self, key: &str) -> Result<bool, LearnError> {
        match self {
            Self::Bool(b) => Ok(*b),
            Self::Text(s) if s == "true" => Ok(true),
            Self::Text(s) if s == "false" => Ok(false),
            _ => Err(LearnError::Config(format!("{key}: expected a boolean"))),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        Self::Num(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        Self::Text(v.to_string())
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        Self::Bool(v)
    }
}

/// Keys accepted from third-party configs that have no effect here
/// (squared loss is the only objective).
const IGNORED_KEYS: [&str; 6] = [
    "objective",
    "metric",
    "is_unbalance",
    "is_training_metric",
    "boosting",
    "verbose",
];

impl LearnerConfig {
    /// Applies `key = value` pairs on top of `self`. Accepted aliases:
    /// `colsample_bytree` for `feature_fraction`; `l2_leaf_reg`, `lambda`,
    /// `lambda_l2` for `reg_lambda`; `reg_alpha`, `lambda_l1` for `alpha`;
    /// `min_split_gain` for `gamma`; `iterations`, `num_iterations` for
    /// `n_estimators`; `depth` for `max_depth`; `eta` for `learning_rate`;
    /// `subsample` for `bagging_fraction`; `min_data_in_leaf` for
    /// `min_samples_leaf`; `border_count` for `max_bin`; `random_state`,
    /// `random_seed` for `seed`. An explicit `seed` wins over its aliases.
    pub fn with_params(mut self, params: &[(&str, ParamValue)]) -> Result<Self, LearnError> {
        let mut explicit_seed = false;
        for (key, v) in params {
            match *key {
                "algorithm" => {
                    self.algorithm = match v {
                        ParamValue::Text(s) if s == "random_forest" => Algorithm::RandomForest,
                        ParamValue::Text(s) if s == "gbdt" => Algorithm::Gbdt,
                        _ => {
                            return Err(LearnError::Config(
                                "algorithm: random_forest or gbdt".into(),
                            ))
                        }
                    }
                }
                "growth" => {
                    self.growth = match v {
                        ParamValue::Text(s) if s == "depth_wise" => Growth::DepthWise,
                        ParamValue::Text(s) if s == "leaf_wise" => Growth::LeafWise,
                        _ => {
                            return Err(LearnError::Config(
                                "growth: depth_wise or leaf_wise".into(),
                            ))
                        }
                    }
                }
                "learning_rate" | "eta" => self.learning_rate = v.num(key)?,
                "n_estimators" | "iterations" | "num_iterations" => {
                    self.n_estimators = v.count(key)?
                }
                "max_depth" | "depth" => {
                    let d = v.num(key)?;
                    self.max_depth = if d <= 0.0 { None } else { Some(v.count(key)?) };
                }
                "num_leaves" => self.num_leaves = Some(v.count(key)?),
                "feature_fraction" | "colsample_bytree" => self.feature_fraction = v.num(key)?,
                "max_features" => {
                    self.max_features = match v {
                        ParamValue::Text(s) if s == "sqrt" => MaxFeatures::Sqrt,
                        ParamValue::Text(s) if s == "all" => MaxFeatures::All,
                        other => MaxFeatures::Fraction(other.num(key)?),
                    }
                }
                "bagging_fraction" | "subsample" => self.bagging_fraction = v.num(key)?,
                "bagging_freq" => self.bagging_freq = v.count(key)?,
                "bootstrap" => self.bootstrap = v.flag(key)?,
                "reg_lambda" | "l2_leaf_reg" | "lambda" | "lambda_l2" => {
                    self.reg_lambda = v.num(key)?
                }
                "alpha" | "reg_alpha" | "lambda_l1" => self.alpha = v.num(key)?,
                "gamma" | "min_split_gain" => self.gamma = v.num(key)?,
                "max_bin" | "border_count" => self.max_bin = v.count(key)?,
                "min_samples_split" => self.min_samples_split = v.count(key)?,
                "min_samples_leaf" | "min_data_in_leaf" => self.min_samples_leaf = v.count(key)?,
                "base_score" => self.base_score = Some(v.num(key)?),
                "seed" => {
                    self.seed = v.count(key)? as u64;
                    explicit_seed = true;
                }
                "random_state" | "random_seed" => {
                    if !explicit_seed {
                        self.seed = v.count(key)? as u64;
                    }
                }
                k if IGNORED_KEYS.contains(&k) => {}
                other => return Err(LearnError::UnknownParam(other.to_string())),
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::Config(m));
        for (name, v) in [
            ("feature_fraction", self.feature_fraction),
            ("bagging_fraction", self.bagging_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("max_features fraction must be in (0, 1], got {f}"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        for (name, v) in [
            ("reg_lambda", self.reg_lambda),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.n_estimators == 0 {
            return bad("n_estimators must be at least 1".into());
        }
        if self.min_samples_split < 2 || self.min_samples_leaf < 1 {
            return bad("min_samples_split >= 2 and min_samples_leaf >= 1 required".into());
        }
        if matches!(self.num_leaves, Some(n) if n < 2) {
            return bad("num_leaves must be at least 2".into());
        }
        if matches!(self.base_score, Some(b) if !b.is_finite()) {
            return bad("base_score must be finite".into());
        }
        Ok(())
    }
}

/// Default settings mirroring the four libraries whose configurations the
/// presets were written for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    XgBoost,
    CatBoost,
    LightGbm,
    RandomForest,
}

impl Flavor {
    pub const ALL: [Flavor; 4] = [
        Self::XgBoost,
        Self::CatBoost,
        Self::LightGbm,
        Self::RandomForest,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::XgBoost => "XGBoost",
            Self::CatBoost => "CATBoost",
            Self::LightGbm => "LightGBM",
            Self::RandomForest => "Random Forest",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace([' ', '_'], "").as_str() {
            "xgboost" => Some(Self::XgBoost),
            "catboost" => Some(Self::CatBoost),
            "lightgbm" => Some(Self::LightGbm),
            "randomforest" => Some(Self::RandomForest),
            _ => None,
        }
    }

    /// Boosting stand-ins: depth-wise trees for XGBoost and CatBoost
    /// (symmetric trees and ordered boosting are not modeled), leaf-wise
    /// trees for LightGBM.
    pub fn defaults(self) -> LearnerConfig {
        let gbdt = LearnerConfig {
            algorithm: Algorithm::Gbdt,
            growth: Growth::DepthWise,
            learning_rate: 0.3,
            n_estimators: 100,
            max_depth: Some(6),
            num_leaves: None,
            feature_fraction: 1.0,
            max_features: MaxFeatures::All,
            bagging_fraction: 1.0,
            bagging_freq: 0,
            bootstrap: false,
            reg_lambda: 1.0,
            alpha: 0.0,
            gamma: 0.0,
            max_bin: 256,
            min_samples_split: 2,
            min_samples_leaf: 1,
            base_score: Some(0.5),
            seed: 0,
        };
        match self {
            Self::XgBoost => gbdt,
            Self::CatBoost => LearnerConfig {
                learning_rate: 0.03,
                n_estimators: 1000,
                reg_lambda: 3.0,
                max_bin: 254,
                base_score: None,
                ..gbdt
            },
            Self::LightGbm => LearnerConfig {
                growth: Growth::LeafWise,
                learning_rate: 0.1,
                max_depth: None,
                num_leaves: Some(31),
                reg_lambda: 0.0,
                max_bin: 255,
                min_samples_leaf: 20,
                base_score: None,
                ..gbdt
            },
            Self::RandomForest => LearnerConfig {
                algorithm: Algorithm::RandomForest,
                learning_rate: 1.0,
                max_depth: None,
                bootstrap: true,
                reg_lambda: 0.0,
                max_bin: 0,
                base_score: None,
                ..gbdt
            },
        }
    }
}

/// One row of the model-comparison grid with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPreset {
    pub model_id: String,
    pub dataset: DatasetTag,
    pub flavor: Flavor,
    pub config: LearnerConfig,
}

use ParamValue::{Num as N, Text as T};

fn t(s: &str) -> ParamValue {
    T(s.to_string())
}

/// The sixteen tuned configurations (four datasets by four libraries).
pub fn model_presets() -> Vec<ModelPreset> {
    let lgbm_fixed = || {
        vec![
            ("objective", t("regression")),
            ("metric", t("rmse")),
            ("is_unbalance", t("true")),
            ("is_training_metric", t("true")),
            ("boosting", t("gbdt")),
        ]
    };
    let with = |base: Vec<(&'static str, ParamValue)>, rest: Vec<(&'static str, ParamValue)>| {
        let mut v = base;
        v.extend(rest);
        v
    };
    let rows: Vec<(&str, DatasetTag, Flavor, Vec<(&str, ParamValue)>)> = vec![
        (
            "M1",
            DatasetTag::PvCount,
            Flavor::XgBoost,
            vec![
                ("gamma", N(0.)),
                ("alpha", N(12.)),
                ("learning_rate", N(0.027)),
                ("seed", N(712.)),
                ("colsample_bytree", N(0.3)),
                ("reg_lambda", N(1.)),
                ("random_state", N(700.)),
                ("n_estimators", N(299.)),
                ("base_score", N(0.29)),
                ("max_depth", N(7.)),
            ],
        ),
        (
            "M2",
            DatasetTag::PvCount,
            Flavor::CatBoost,
            vec![
                ("l2_leaf_reg", N(2.)),
                ("learning_rate", N(0.1)),
                ("depth", N(9.)),
                ("iterations", N(150.)),
            ],
        ),
        (
            "M3",
            DatasetTag::PvCount,
            Flavor::LightGbm,
            with(
                lgbm_fixed(),
                vec![
                    ("num_leaves", N(36.)),
                    ("feature_fraction", N(0.99)),
                    ("bagging_fraction", N(0.69)),
                    ("bagging_freq", N(4.)),
                    ("learning_rate", N(0.01)),
                    ("max_depth", N(15.)),
                    ("max_bin", N(23.)),
                ],
            ),
        ),
        (
            "M4",
            DatasetTag::PvCount,
            Flavor::RandomForest,
            vec![
                ("n_estimators", N(19.)),
                ("max_depth", N(150.)),
                ("min_samples_split", N(2.)),
                ("max_features", t("sqrt")),
                ("min_samples_leaf", N(2.)),
                ("random_state", N(531.)),
            ],
        ),
        (
            "M5",
            DatasetTag::PvCountPolicy,
            Flavor::XgBoost,
            vec![
                ("gamma", N(0.)),
                ("alpha", N(5.)),
                ("learning_rate", N(0.05)),
                ("random_state", N(185.)),
                ("colsample_bytree", N(0.5)),
                ("reg_lambda", N(0.)),
                ("n_estimators", N(311.)),
                ("base_score", N(0.5)),
                ("max_depth", N(7.)),
                ("seed", N(855.)),
            ],
        ),
        (
            "M6",
            DatasetTag::PvCountPolicy,
            Flavor::CatBoost,
            vec![
                ("l2_leaf_reg", N(2.)),
                ("learning_rate", N(0.1)),
                ("depth", N(6.)),
                ("iterations", N(200.)),
            ],
        ),
        (
            "M7",
            DatasetTag::PvCountPolicy,
            Flavor::LightGbm,
            with(
                lgbm_fixed(),
                vec![
                    ("num_leaves", N(36.)),
                    ("feature_fraction", N(0.81)),
                    ("bagging_fraction", N(0.91)),
                    ("bagging_freq", N(20.)),
                    ("learning_rate", N(0.021)),
                    ("max_depth", N(14.)),
                    ("max_bin", N(23.)),
                ],
            ),
        ),
        (
            "M8",
            DatasetTag::PvCountPolicy,
            Flavor::RandomForest,
            vec![
                ("n_estimators", N(700.)),
                ("max_depth", N(150.)),
                ("min_samples_split", N(2.)),
                ("max_features", t("sqrt")),
                ("min_samples_leaf", N(2.)),
                ("random_state", N(372.)),
            ],
        ),
        (
            "M9",
            DatasetTag::PvRatio,
            Flavor::XgBoost,
            vec![
                ("gamma", N(0.)),
                ("alpha", N(12.)),
                ("learning_rate", N(0.025)),
                ("seed", N(712.)),
                ("colsample_bytree", N(0.35)),
                ("reg_lambda", N(1.)),
                ("random_state", N(789.)),
                ("n_estimators", N(300.)),
                ("base_score", N(0.5)),
                ("max_depth", N(8.)),
            ],
        ),
        (
            "M10",
            DatasetTag::PvRatio,
            Flavor::CatBoost,
            vec![
                ("l2_leaf_reg", N(1.)),
                ("learning_rate", N(0.09)),
                ("depth", N(10.)),
                ("iterations", N(200.)),
            ],
        ),
        (
            "M11",
            DatasetTag::PvRatio,
            Flavor::LightGbm,
            with(
                lgbm_fixed(),
                vec![
                    ("num_leaves", N(45.)),
                    ("feature_fraction", N(0.25)),
                    ("bagging_fraction", N(0.75)),
                    ("bagging_freq", N(4.)),
                    ("learning_rate", N(0.01)),
                    ("max_depth", N(15.)),
                    ("max_bin", N(52.)),
                ],
            ),
        ),
        (
            "M12",
            DatasetTag::PvRatio,
            Flavor::RandomForest,
            vec![
                ("n_estimators", N(300.)),
                ("max_depth", N(64.)),
                ("min_samples_split", N(3.)),
                ("max_features", t("sqrt")),
                ("min_samples_leaf", N(2.)),
                ("random_state", N(435.)),
            ],
        ),
        (
            "M13",
            DatasetTag::PvRatioPolicy,
            Flavor::XgBoost,
            vec![
                ("gamma", N(0.)),
                ("alpha", N(5.)),
                ("learning_rate", N(0.05)),
                ("seed", N(1164.)),
                ("colsample_bytree", N(0.5)),
                ("reg_lambda", N(0.)),
                ("random_state", N(185.)),
                ("n_estimators", N(500.)),
                ("base_score", N(0.52)),
                ("max_depth", N(9.)),
            ],
        ),
        (
            "M14",
            DatasetTag::PvRatioPolicy,
            Flavor::CatBoost,
            vec![
                ("l2_leaf_reg", N(1.)),
                ("learning_rate", N(0.09)),
                ("depth", N(6.)),
                ("iterations", N(150.)),
            ],
        ),
        (
            "M15",
            DatasetTag::PvRatioPolicy,
            Flavor::LightGbm,
            with(
                lgbm_fixed(),
                vec![
                    ("num_leaves", N(36.)),
                    ("feature_fraction", N(0.34)),
                    ("bagging_fraction", N(0.75)),
                    ("bagging_freq", N(4.)),
                    ("learning_rate", N(0.01)),
                    ("max_depth", N(15.)),
                    ("max_bin", N(23.)),
                ],
            ),
        ),
        (
            "M16",
            DatasetTag::PvRatioPolicy,
            Flavor::RandomForest,
            vec![
                ("n_estimators", N(300.)),
                ("max_depth", N(280.)),
                ("min_samples_split", N(2.)),
                ("max_features", t("sqrt")),
                ("min_samples_leaf", N(2.)),
                ("random_state", N(42.)),
            ],
        ),
    ];
    rows.into_iter()
        .map(|(id, dataset, flavor, params)| ModelPreset {
            model_id: id.to_string(),
            dataset,
            flavor,
            config: flavor
                .defaults()
                .with_params(&params)
                .expect("preset parameters are valid"),
        })
        .collect()
}
