use serde::Serialize;

use super::schema::FeatureSpec;
use super::table::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureReport {
    pub name: String,
    pub is_target: bool,
    pub nulls: usize,
    pub out_of_range: usize,
    /// Geoids holding an out-of-range (or non-finite) value.
    pub offending: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub columns: Vec<FeatureReport>,
}

impl ValidationReport {
    pub fn violations(&self) -> usize {
        self.columns.iter().map(|c| c.out_of_range).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.violations() == 0
    }

    /// `column,is_target,nulls,out_of_range,offending` with offending geoids
    /// joined by `;`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["column", "is_target", "nulls", "out_of_range", "offending"])
            .expect("in-memory csv");
        for c in &self.columns {
            w.write_record([
                c.name.clone(),
                c.is_target.to_string(),
                c.nulls.to_string(),
                c.out_of_range.to_string(),
                c.offending.join(";"),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }
}

fn column_report(
    spec: &FeatureSpec,
    is_target: bool,
    cells: impl Iterator<Item = (String, Option<f64>)>,
) -> FeatureReport {
    let mut r = FeatureReport {
        name: spec.name.clone(),
        is_target,
        nulls: 0,
        out_of_range: 0,
        offending: Vec::new(),
    };
    for (geoid, v) in cells {
        match v {
            None => r.nulls += 1,
            Some(x) if !spec.in_range(x) => {
                r.out_of_range += 1;
                r.offending.push(geoid);
            }
            Some(_) => {}
        }
    }
    r
}

/// Null and out-of-range counts per column against the schema ranges,
/// bounds inclusive. Missing values are counted but are not violations.
pub fn validate_schema(table: &FeatureTable) -> ValidationReport {
    let mut columns = Vec::new();
    for (k, spec) in table.schema.features.iter().enumerate() {
        columns.push(column_report(
            spec,
            false,
            table.records.iter().map(|r| (r.geoid.clone(), r.values[k])),
        ));
    }
    for (k, spec) in table.schema.targets.iter().enumerate() {
        columns.push(column_report(
            spec,
            true,
            table
                .records
                .iter()
                .map(|r| (r.geoid.clone(), r.targets[k])),
        ));
    }
    ValidationReport {
        records: table.records.len(),
        columns,
    }
}
