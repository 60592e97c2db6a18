//! Rooftop solar deployment pipeline.
//!
//! The crate covers the full desk-scale path from census geography to model
//! explanations:
//!
//! - [`geo`]: Web Mercator image footprints, tile planning, polygon areas.
//! - [`detect`]: IoU, class-wise NMS, detection matching and COCO-style AP/AR.
//! - [`deploy`]: per-block-group PV count per household and PV-to-roof ratio.
//! - [`ingest`]: feature schema, spatial joins, imputation, tile fetching.
//! - [`learn`]: random forests and second-order gradient boosting.
//! - [`explain`]: feature-importance aggregation, TreeSHAP, OLS and marginal effects.
//! - [`synth`]: seeded synthetic scenes and regression datasets.

pub mod deploy;
pub mod detect;
pub mod explain;
pub mod geo;
pub mod ingest;
pub mod learn;
pub mod rng;
pub mod synth;
