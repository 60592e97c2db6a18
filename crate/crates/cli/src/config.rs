use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pvmap_core::detect::NmsThresholds;
use pvmap_core::ingest::RetryPolicy;
use pvmap_core::synth::{DetectorModel, SceneSpec};
use serde::{Deserialize, Serialize};

/// Run configuration read from TOML. Every section is optional and
/// command-line flags override individual values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub geo: GeoConfig,
    pub nms: NmsConfig,
    pub deploy: DeployConfig,
    pub tiles: TilesConfig,
    pub learn: LearnSection,
    pub explain: ExplainSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoConfig {
    pub zoom: u32,
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            zoom: 20,
            width_px: 640,
            height_px: 640,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    pub roof: f64,
    pub pv: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        let d = NmsThresholds::default();
        Self {
            roof: d.roof,
            pv: d.pv,
        }
    }
}

impl NmsConfig {
    pub fn thresholds(&self) -> NmsThresholds {
        NmsThresholds {
            roof: self.roof,
            pv: self.pv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeployConfig {
    /// Merge touching PV boxes (outlines grown by this many px) into one system.
    pub merge_eps_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilesConfig {
    pub endpoint: String,
    pub cache_dir: PathBuf,
    pub rate_per_sec: f64,
    pub burst: u32,
    pub offline: bool,
    pub fixture_dir: Option<PathBuf>,
    pub retry: Option<RetryPolicy>,
    pub timeout_s: f64,
}

impl Default for TilesConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            cache_dir: PathBuf::from("tile_cache"),
            rate_per_sec: 5.0,
            burst: 5,
            offline: false,
            fixture_dir: None,
            retry: None,
            timeout_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnSection {
    /// Train and test shares; the last part is the test set.
    pub fractions: Vec<f64>,
    /// Defaults to the run seed.
    pub split_seed: Option<u64>,
    /// Model ids to train; empty trains all sixteen.
    pub models: Vec<String>,
    /// Caps every preset's tree count.
    pub max_estimators: Option<usize>,
}

impl Default for LearnSection {
    fn default() -> Self {
        Self {
            fractions: vec![0.8, 0.2],
            split_seed: None,
            models: Vec::new(),
            max_estimators: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Features kept in the SHAP point table.
    pub shap_top: usize,
    pub ame_points: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            shap_top: 20,
            ame_points: pvmap_core::explain::DEFAULT_AME_GRID,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub scene: SceneSpec,
    pub detector: DetectorModel,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            detector: DetectorModel::Perfect,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config: reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("config: parsing {}", path.display()))
    }
}
