use std::collections::BTreeMap;

use rayon::prelude::*;

use super::adjacency::{impute_adjacent_mean, AdjacencyGraph, ImputeReport};
use super::join::{
    assign_zip_by_population, broadcast_tract_to_blockgroups, spatial_join_largest_share,
    OverlayLayer, TractTable,
};
use super::schema::{FeatureSchema, SVI_FEATURES, TARGET_COUNT, TARGET_RATIO};
use super::table::{BlockGroupRecord, FeatureTable};
use super::IngestError;
use crate::geo::Polygon;

/// Features filled by adjacent-mean imputation by default.
pub const IMPUTED_FEATURES: [&str; 2] = ["Median Home Value", "Year Structure Built"];

/// Inputs to the block-group feature table. Block groups carry their own
/// block-group-level attributes as payload.
pub struct AssemblyInputs<'a> {
    pub block_groups: &'a OverlayLayer,
    /// Joined by largest overlap share (jurisdictions, utilities, counties).
    pub overlays: &'a [OverlayLayer],
    /// Joined by most populous overlapping zip.
    pub zips: Option<&'a OverlayLayer>,
    pub tracts: Option<&'a TractTable>,
    /// geoid to (PV count per household, PV-to-roof ratio).
    pub targets: Option<&'a BTreeMap<String, (Option<f64>, Option<f64>)>>,
    pub impute: &'a [&'a str],
}

#[derive(Debug, Default)]
pub struct AssemblyReport {
    /// Per-block-group problems that left values missing.
    pub flags: Vec<IngestError>,
    pub impute: ImputeReport,
}

fn apply_payload(
    rec: &mut BlockGroupRecord,
    schema: &FeatureSchema,
    payload: &BTreeMap<String, f64>,
) {
    for (k, v) in payload {
        if let Some(i) = schema.feature_index(k) {
            rec.values[i] = Some(*v);
        }
    }
}

/// Builds one record per block group, ordered by geoid. Later sources
/// overwrite earlier ones for the same feature: block-group attributes,
/// then overlays in order, then zip, then tract values.
pub fn assemble_feature_table(
    inputs: &AssemblyInputs<'_>,
) -> Result<(FeatureTable, AssemblyReport), IngestError> {
    let schema = FeatureSchema::colorado();
    let impute_idx = inputs
        .impute
        .iter()
        .map(|n| schema.require(n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut units: BTreeMap<&str, (Vec<Polygon>, BTreeMap<String, f64>)> = BTreeMap::new();
    for f in &inputs.block_groups.features {
        let e = units.entry(f.id.as_str()).or_default();
        e.0.extend(f.parts.iter().cloned());
        e.1.extend(f.payload.iter().map(|(k, v)| (k.clone(), *v)));
    }
    let geoids: Vec<String> = units.keys().map(|s| s.to_string()).collect();
    let joined: Vec<(BlockGroupRecord, Vec<IngestError>)> = units
        .par_iter()
        .map(|(geoid, (parts, attrs))| {
            let mut rec = BlockGroupRecord::empty(*geoid, &schema);
            let mut flags = Vec::new();
            apply_payload(&mut rec, &schema, attrs);
            for layer in inputs.overlays {
                match spatial_join_largest_share(geoid, parts, layer) {
                    Ok(c) => apply_payload(&mut rec, &schema, &c.feature.payload),
                    Err(e) => flags.push(e),
                }
            }
            if let Some(z) = inputs.zips {
                match assign_zip_by_population(geoid, parts, z) {
                    Ok(c) => apply_payload(&mut rec, &schema, &c.feature.payload),
                    Err(e) => flags.push(e),
                }
            }
            (rec, flags)
        })
        .collect();
    let mut table = FeatureTable::new(schema);
    let mut report = AssemblyReport::default();
    for (rec, flags) in joined {
        table.records.push(rec);
        report.flags.extend(flags);
    }
    if let Some(tracts) = inputs.tracts {
        let svi: Vec<usize> = SVI_FEATURES
            .iter()
            .map(|n| table.schema.require(n))
            .collect::<Result<_, _>>()?;
        for (rec, r) in table
            .records
            .iter_mut()
            .zip(broadcast_tract_to_blockgroups(&geoids, tracts))
        {
            match r {
                Ok(vals) => {
                    for (&i, v) in svi.iter().zip(vals) {
                        rec.values[i] = v;
                    }
                }
                Err(e) => report.flags.push(e),
            }
        }
    }
    if let Some(t) = inputs.targets {
        let (ic, ir) = (
            table
                .schema
                .target_index(TARGET_COUNT)
                .expect("count target"),
            table
                .schema
                .target_index(TARGET_RATIO)
                .expect("ratio target"),
        );
        for rec in &mut table.records {
            if let Some(&(c, r)) = t.get(&rec.geoid) {
                rec.targets[ic] = c;
                rec.targets[ir] = r;
            }
        }
    }
    if !impute_idx.is_empty() {
        let pairs: Vec<(String, Vec<Polygon>)> = units
            .into_iter()
            .map(|(g, (p, _))| (g.to_string(), p))
            .collect();
        let graph = AdjacencyGraph::rook(&pairs);
        report.impute = impute_adjacent_mean(&mut table, &graph, &impute_idx)?;
    }
    Ok((table, report))
}
