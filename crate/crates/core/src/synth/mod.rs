//! Seeded synthetic ground truth: rooftop scenes with perfect or noisy
//! detectors, and regression datasets with known generating terms.

use thiserror::Error;

mod detector;
mod regression;
mod scene;

pub use detector::{render_detections, DetectorModel, NoisyDetector};
pub use regression::{
    dataset_to_table, generate_feature_table, generate_regression, RegressionKind, SynthRegression,
    SynthRegressionSpec,
};
pub use scene::{generate_scene, Dist, Scene, SceneImage, SceneSpec};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("infeasible layout: {0}")]
    Infeasible(String),
}
