//! Block-group feature table: schema, overlay joins, tract broadcast,
//! adjacency imputation, range validation and the tile-fetch client.

use thiserror::Error;

mod adjacency;
mod assemble;
mod join;
mod schema;
mod table;
mod tiles;
mod validate;

pub use adjacency::{impute_adjacent_mean, AdjacencyGraph, ImputeReport};
pub use assemble::{assemble_feature_table, AssemblyInputs, AssemblyReport, IMPUTED_FEATURES};
pub use join::{
    assign_zip_by_population, broadcast_tract_to_blockgroups, read_overlay_layer, read_tract_csv,
    spatial_join_largest_share, tract_of, JoinChoice, OverlayFeature, OverlayLayer, TractTable,
};
pub use schema::{
    FeatureSchema, FeatureSpec, Granularity, POLICY_FEATURES, SVI_FEATURES, TARGET_COUNT,
    TARGET_RATIO,
};
pub use table::{
    read_feature_csv, write_feature_csv, BlockGroupRecord, FeatureTable, SYNTH_TARGET,
};
pub use tiles::{
    cache_key, fixture_name, FetchedTile, HttpTransport, Provenance, RetryPolicy, TileFetchConfig,
    TileFetcher, TileSource, TileTransport, TransportError,
};
pub use validate::{validate_schema, FeatureReport, ValidationReport};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("block group {0}: no overlapping polygon in layer")]
    Unassigned(String),
    #[error("block group {0}: no tract row for {1}")]
    UnknownTract(String, String),
    #[error("geoid {0} is too short to carry a tract prefix")]
    Geoid(String),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("duplicate feature {0:?}")]
    DuplicateFeature(String),
    #[error("layer feature {id}: {msg}")]
    Layer { id: String, msg: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid tile fetch config: {0}")]
    Config(String),
    #[error("offline and no cached or fixture tile for {0}")]
    OfflineMiss(String),
    #[error("tile request failed after {attempts} attempts: {msg}")]
    Network { attempts: u32, msg: String },
    #[error(transparent)]
    Geo(#[from] crate::geo::GeoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
