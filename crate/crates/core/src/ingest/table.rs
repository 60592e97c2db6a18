use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, FeatureSpec};
use super::IngestError;

/// Target column name used by synthetic tables.
pub const SYNTH_TARGET: &str = "y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGroupRecord {
    pub geoid: String,
    /// One slot per schema feature; `None` is a missing value.
    pub values: Vec<Option<f64>>,
    pub targets: Vec<Option<f64>>,
}

impl BlockGroupRecord {
    pub fn empty(geoid: impl Into<String>, schema: &FeatureSchema) -> Self {
        Self {
            geoid: geoid.into(),
            values: vec![None; schema.features.len()],
            targets: vec![None; schema.targets.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub schema: FeatureSchema,
    pub records: Vec<BlockGroupRecord>,
}

impl FeatureTable {
    pub fn new(schema: FeatureSchema) -> Self {
        Self {
            schema,
            records: Vec::new(),
        }
    }

    pub fn column(&self, feature: usize) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.values[feature]).collect()
    }
}

/// Reads a feature CSV. The first column must be `geoid`. Columns named
/// like the block-group schema take its ranges; the two deployment targets
/// and `y` become targets; any other column is an unbounded feature. Empty
/// cells are missing values.
pub fn read_feature_csv(text: &str) -> Result<FeatureTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.get(0) != Some("geoid") {
        return Err(IngestError::Parse {
            line: 1,
            msg: "first column must be geoid".into(),
        });
    }
    let known = FeatureSchema::colorado();
    // (is_target, position within its list)
    let mut slots = Vec::new();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for name in header.iter().skip(1) {
        if let Some(t) = known.target_index(name) {
            slots.push((true, targets.len()));
            targets.push(known.targets[t].clone());
        } else if name == SYNTH_TARGET {
            slots.push((true, targets.len()));
            targets.push(FeatureSpec::unbounded(name));
        } else {
            slots.push((false, features.len()));
            features.push(match known.feature_index(name) {
                Some(i) => known.features[i].clone(),
                None => FeatureSpec::unbounded(name),
            });
        }
    }
    let schema = FeatureSchema::new(features, targets)?;
    let mut table = FeatureTable::new(schema);
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| IngestError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let mut row = BlockGroupRecord::empty(&rec[0], &table.schema);
        for (cell, &(is_target, k)) in rec.iter().skip(1).zip(&slots) {
            let cell = cell.trim();
            let v = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| IngestError::Parse {
                    line,
                    msg: format!("not a number: {cell:?}"),
                })?)
            };
            if is_target {
                row.targets[k] = v;
            } else {
                row.values[k] = v;
            }
        }
        table.records.push(row);
    }
    Ok(table)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `geoid`, the feature columns, then the target columns.
pub fn write_feature_csv(table: &FeatureTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("geoid")
        .chain(table.schema.features.iter().map(|f| f.name.as_str()))
        .chain(table.schema.targets.iter().map(|f| f.name.as_str()))
        .collect();
    w.write_record(&header).expect("in-memory csv");
    for r in &table.records {
        let row: Vec<String> = std::iter::once(r.geoid.clone())
            .chain(r.values.iter().map(|v| cell(*v)))
            .chain(r.targets.iter().map(|v| cell(*v)))
            .collect();
        w.write_record(&row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}
