use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Spatial unit a feature is sourced at before it reaches the block group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    BlockGroup,
    Tract,
    County,
    Zip,
    Jurisdiction,
    Utility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    pub granularity: Granularity,
}

impl FeatureSpec {
    pub fn new(name: &str, unit: &str, min: f64, max: f64, granularity: Granularity) -> Self {
        Self {
            name: name.to_string(),
            unit: unit.to_string(),
            min,
            max,
            granularity,
        }
    }

    /// Unbounded block-group feature, for synthetic tables.
    pub fn unbounded(name: &str) -> Self {
        Self::new(
            name,
            "",
            f64::NEG_INFINITY,
            f64::INFINITY,
            Granularity::BlockGroup,
        )
    }

    pub fn in_range(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

pub const TARGET_COUNT: &str = "PV Count per HH";
pub const TARGET_RATIO: &str = "PV-to-Roof Ratio";

/// Jurisdiction-level policy features; null for unincorporated areas.
pub const POLICY_FEATURES: [&str; 6] = [
    "Solar Mandate",
    "Net Metering",
    "SolSmart Awardee",
    "Online Permit",
    "Sameday InPerson Permit",
    "Permit & Pre-Install Days",
];

/// The nine tract-level social vulnerability components.
pub const SVI_FEATURES: [&str; 9] = [
    "% Below Poverty",
    "% Disability",
    "% Single Parent",
    "% Limited English",
    "% 10+ Unit Housing",
    "% Mobile Homes",
    "% Ppl. > Rooms",
    "% No Vehicle",
    "% Unemployed",
];

type Row = (&'static str, &'static str, f64, f64, Granularity);

const BLOCK_GROUP_FEATURES: [Row; 43] = {
    use Granularity::*;
    [
        ("% Tree-to-Land Area", "fraction", 0.001, 0.052, BlockGroup),
        ("Solar Radiation", "kWh/m2/day", 4.712, 7.236, BlockGroup),
        ("Median HH Income", "USD", 14145.0, 250000.0, BlockGroup),
        ("Median Age", "years", 17.7, 84.6, BlockGroup),
        ("% 65 +", "fraction", 0.001, 1.0, BlockGroup),
        ("% Bachelors +", "fraction", 0.001, 0.855, BlockGroup),
        ("% Renters", "fraction", 0.001, 1.0, BlockGroup),
        ("Year Structure Built", "year", 1939.0, 2014.0, BlockGroup),
        ("Avg. No. Bedrooms", "count", 0.466, 4.524, BlockGroup),
        ("Median Home Value", "USD", 10000.0, 2000000.0, BlockGroup),
        ("Rurality", "code", 1.0, 9.0, County),
        ("% Dem. Votes", "fraction", 0.109, 0.796, County),
        ("% African American", "fraction", 0.0, 0.633, BlockGroup),
        ("% Hispanic", "fraction", 0.0, 0.923, BlockGroup),
        ("% Asian", "fraction", 0.0, 0.422, BlockGroup),
        ("% Other Race", "fraction", 0.0, 0.973, BlockGroup),
        ("Transmission Volt.", "log kV", 0.0, 8.166, BlockGroup),
        ("Transmission Length", "log m", 0.0, 14.455, BlockGroup),
        ("Muni. Utilities", "indicator", 0.0, 1.0, Utility),
        ("Rural Co-Ops", "indicator", 0.0, 1.0, Utility),
        ("Resident. Elec. Rate", "USD/kWh", 0.062, 0.212, Zip),
        ("Commercial Elec. Rate", "USD/kWh", 0.076, 0.260, Zip),
        ("Solar Mandate", "indicator", 0.0, 1.0, Jurisdiction),
        ("Net Metering", "indicator", 0.0, 1.0, Jurisdiction),
        ("SolSmart Awardee", "indicator", 0.0, 1.0, Jurisdiction),
        ("Online Permit", "indicator", 0.0, 1.0, Jurisdiction),
        (
            "Sameday InPerson Permit",
            "indicator",
            0.0,
            1.0,
            Jurisdiction,
        ),
        (
            "Permit & Pre-Install Days",
            "business days",
            8.0,
            35.0,
            Jurisdiction,
        ),
        ("Drought Risk", "EAL score", 0.0, 29.35, County),
        ("Wildfire Risk", "EAL score", 0.0, 48.921, County),
        ("Hail Risk", "EAL score", 2.583, 64.351, County),
        ("Winter Weather Risk", "EAL score", 0.0, 62.890, County),
        ("Strong Wind Risk", "EAL score", 4.107, 59.476, County),
        ("Tornado Risk", "EAL score", 5.345, 56.195, County),
        ("% Below Poverty", "fraction", 0.0, 0.847, Tract),
        ("% Disability", "percent", 0.4, 44.6, Tract),
        ("% Single Parent", "percent", 0.0, 27.6, Tract),
        ("% Limited English", "percent", 0.0, 37.7, Tract),
        ("% 10+ Unit Housing", "percent", 0.0, 98.9, Tract),
        ("% Mobile Homes", "percent", 0.0, 79.1, Tract),
        ("% Ppl. > Rooms", "percent", 0.0, 24.8, Tract),
        ("% No Vehicle", "percent", 0.0, 43.3, Tract),
        ("% Unemployed", "percent", 0.0, 28.4, Tract),
    ]
};

/// Ordered predictor and target columns with their legal ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub targets: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, targets: Vec<FeatureSpec>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for f in features.iter().chain(&targets) {
            if !seen.insert(f.name.as_str()) {
                return Err(IngestError::DuplicateFeature(f.name.clone()));
            }
            if !(f.min <= f.max) {
                return Err(IngestError::Layer {
                    id: f.name.clone(),
                    msg: "range min exceeds max".into(),
                });
            }
        }
        Ok(Self { features, targets })
    }

    /// The 43 block-group predictors and the two deployment targets.
    pub fn colorado() -> Self {
        let features = BLOCK_GROUP_FEATURES
            .iter()
            .map(|&(n, u, lo, hi, g)| FeatureSpec::new(n, u, lo, hi, g))
            .collect();
        let targets = vec![
            FeatureSpec::new(
                TARGET_COUNT,
                "systems/household",
                0.001,
                0.784,
                Granularity::BlockGroup,
            ),
            FeatureSpec::new(
                TARGET_RATIO,
                "fraction",
                0.001,
                0.259,
                Granularity::BlockGroup,
            ),
        ];
        Self { features, targets }
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn target_index(&self, name: &str) -> Option<usize> {
        self.targets.iter().position(|f| f.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn require(&self, name: &str) -> Result<usize, IngestError> {
        self.feature_index(name)
            .ok_or_else(|| IngestError::UnknownFeature(name.to_string()))
    }
}
