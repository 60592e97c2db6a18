//! Model interpretation: R²-weighted importance aggregation, path-dependent
//! TreeSHAP, OLS with heteroskedasticity-robust errors, and average
//! marginal effects.

use thiserror::Error;

use crate::learn::LearnError;

mod ame;
mod fis;
mod ols;
mod shap;

pub use ame::{ame, ame_default_grid, ame_to_csv, AmePoint, AmeReport, DEFAULT_AME_GRID};
pub use fis::{
    aggregate_fis, bivariate_correlations, fis_table, standardize_fis, Correlation, FisModel,
    FisRow, FisTable, Standardized,
};
pub use ols::{ols_fit, regression_table, significance_stars, LinearModelSpec, OlsFit, Term};
pub use shap::{
    explain_dataset, shap_summary, shapley_by_enumeration, tree_shap, ShapExplanation, ShapPoint,
    ShapSummary,
};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("feature sets differ between models {0:?} and {1:?}")]
    FeatureMismatch(String, String),
    #[error("invalid weight for model {model:?}: {weight}")]
    Weight { model: String, weight: f64 },
    #[error("no models to aggregate")]
    Empty,
    #[error("tree {tree} has no usable cover statistics at node {node}")]
    MissingCover { tree: usize, node: usize },
    #[error("invalid term {0:?}")]
    Term(String),
    #[error("duplicate term {0:?}")]
    DuplicateTerm(String),
    #[error("need more rows ({n}) than terms ({k})")]
    TooFewRows { n: usize, k: usize },
    #[error("design matrix is rank deficient; collinear terms: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("focal feature {0:?} has no term in the model")]
    FocalAbsent(String),
    #[error("{0}")]
    Input(String),
}
