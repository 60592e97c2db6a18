use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::table::FeatureTable;
use super::IngestError;
use crate::geo::{GeoPoint, Polygon};

/// Distance, in degrees, under which boundary segments are considered
/// coincident (about 0.1 mm).
const EDGE_EPS_DEG: f64 = 1e-9;

/// Undirected neighbor sets keyed by geoid; symmetric and free of self loops.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdjacencyGraph {
    neighbors: BTreeMap<String, BTreeSet<String>>,
}

impl AdjacencyGraph {
    pub fn from_pairs<I, S, P>(nodes: I, pairs: &[(P, P)]) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
        P: AsRef<str>,
    {
        let mut g = Self::default();
        for n in nodes {
            g.neighbors.entry(n.as_ref().to_string()).or_default();
        }
        for (a, b) in pairs {
            g.link(a.as_ref(), b.as_ref())?;
        }
        Ok(g)
    }

    fn link(&mut self, a: &str, b: &str) -> Result<(), IngestError> {
        if a == b {
            return Err(IngestError::Layer {
                id: a.to_string(),
                msg: "adjacent to itself".into(),
            });
        }
        self.neighbors
            .entry(a.to_string())
            .or_default()
            .insert(b.to_string());
        self.neighbors
            .entry(b.to_string())
            .or_default()
            .insert(a.to_string());
        Ok(())
    }

    /// Rook contiguity: two units are neighbors when their boundaries share
    /// a segment of positive length. Touching at a single point does not
    /// count. Parts sharing a geoid are merged.
    pub fn rook(units: &[(String, Vec<Polygon>)]) -> Self {
        let mut by_id: BTreeMap<&str, Vec<&Polygon>> = BTreeMap::new();
        for (id, parts) in units {
            by_id.entry(id.as_str()).or_default().extend(parts);
        }
        let ids: Vec<&str> = by_id.keys().copied().collect();
        let edges: Vec<Vec<[GeoPoint; 2]>> = ids
            .iter()
            .map(|id| by_id[id].iter().flat_map(|p| ring_edges(p)).collect())
            .collect();
        let boxes: Vec<[f64; 4]> = edges.iter().map(|e| edge_bounds(e)).collect();
        let mut g = Self::default();
        for id in &ids {
            g.neighbors.entry(id.to_string()).or_default();
        }
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                if !boxes_touch(&boxes[i], &boxes[j]) {
                    continue;
                }
                if share_segment(&edges[i], &edges[j]) {
                    g.link(ids[i], ids[j]).expect("distinct ids");
                }
            }
        }
        g
    }

    pub fn neighbors(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.neighbors.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.neighbors.keys().map(String::as_str)
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors.iter().all(|(a, ns)| {
            !ns.contains(a)
                && ns
                    .iter()
                    .all(|b| self.neighbors.get(b).is_some_and(|s| s.contains(a)))
        })
    }
}

fn ring_edges(p: &Polygon) -> Vec<[GeoPoint; 2]> {
    let mut out = Vec::new();
    for ring in std::iter::once(p.exterior()).chain(p.holes().iter().map(Vec::as_slice)) {
        for k in 0..ring.len() {
            out.push([ring[k], ring[(k + 1) % ring.len()]]);
        }
    }
    out
}

fn edge_bounds(edges: &[[GeoPoint; 2]]) -> [f64; 4] {
    let mut b = [
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    ];
    for e in edges {
        for p in e {
            b[0] = b[0].min(p.lon);
            b[1] = b[1].min(p.lat);
            b[2] = b[2].max(p.lon);
            b[3] = b[3].max(p.lat);
        }
    }
    b
}

fn boxes_touch(a: &[f64; 4], b: &[f64; 4]) -> bool {
    a[0] <= b[2] + EDGE_EPS_DEG
        && b[0] <= a[2] + EDGE_EPS_DEG
        && a[1] <= b[3] + EDGE_EPS_DEG
        && b[1] <= a[3] + EDGE_EPS_DEG
}

/// Whether segment `t` runs along segment `s` for a positive length.
fn collinear_overlap(s: &[GeoPoint; 2], t: &[GeoPoint; 2]) -> bool {
    let (dx, dy) = (s[1].lon - s[0].lon, s[1].lat - s[0].lat);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return false;
    }
    let off = |p: GeoPoint| ((p.lon - s[0].lon) * dy - (p.lat - s[0].lat) * dx).abs() / len;
    if off(t[0]) > EDGE_EPS_DEG || off(t[1]) > EDGE_EPS_DEG {
        return false;
    }
    let along = |p: GeoPoint| ((p.lon - s[0].lon) * dx + (p.lat - s[0].lat) * dy) / len;
    let (a, b) = (along(t[0]), along(t[1]));
    let lo = a.min(b).max(0.0);
    let hi = a.max(b).min(len);
    hi - lo > EDGE_EPS_DEG
}

fn share_segment(a: &[[GeoPoint; 2]], b: &[[GeoPoint; 2]]) -> bool {
    a.iter().any(|s| {
        let sb = edge_bounds(std::slice::from_ref(s));
        b.iter().any(|t| {
            boxes_touch(&sb, &edge_bounds(std::slice::from_ref(t))) && collinear_overlap(s, t)
        })
    })
}

/// Outcome of adjacent-mean imputation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImputeReport {
    /// (geoid, feature name, round in which the value was filled).
    pub imputed: Vec<(String, String, usize)>,
    /// Values with no reachable non-missing neighbor.
    pub unresolved: Vec<(String, String)>,
}

/// Fills missing values of `features` with the mean of neighboring
/// non-missing values. Round 1 uses only observed neighbors; each further
/// round also uses values filled in the round before, until nothing
/// changes. Observed values are never modified, so a second run is a no-op.
/// Geoids absent from the graph have no neighbors.
pub fn impute_adjacent_mean(
    table: &mut FeatureTable,
    graph: &AdjacencyGraph,
    features: &[usize],
) -> Result<ImputeReport, IngestError> {
    for &f in features {
        if f >= table.schema.features.len() {
            return Err(IngestError::UnknownFeature(format!("#{f}")));
        }
    }
    let row_of: HashMap<&str, usize> = table
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.geoid.as_str(), i))
        .collect();
    let neighbor_rows: Vec<Vec<usize>> = table
        .records
        .iter()
        .map(|r| {
            graph
                .neighbors(&r.geoid)
                .map(|ns| {
                    ns.iter()
                        .filter_map(|n| row_of.get(n.as_str()).copied())
                        .collect()
                })
                .unwrap_or_default()
        })
        .collect();
    let mut report = ImputeReport::default();
    for &f in features {
        let name = table.schema.features[f].name.clone();
        let mut current: Vec<Option<f64>> = table.column(f);
        let mut round = 0;
        loop {
            round += 1;
            let mut filled = Vec::new();
            for (i, v) in current.iter().enumerate() {
                if v.is_some() {
                    continue;
                }
                let (mut sum, mut k) = (0.0, 0usize);
                for &j in &neighbor_rows[i] {
                    if let Some(x) = current[j] {
                        sum += x;
                        k += 1;
                    }
                }
                if k > 0 {
                    filled.push((i, sum / k as f64));
                }
            }
            if filled.is_empty() {
                break;
            }
            for (i, v) in filled {
                current[i] = Some(v);
                table.records[i].values[f] = Some(v);
                report
                    .imputed
                    .push((table.records[i].geoid.clone(), name.clone(), round));
            }
        }
        for (i, v) in current.iter().enumerate() {
            if v.is_none() {
                report
                    .unresolved
                    .push((table.records[i].geoid.clone(), name.clone()));
            }
        }
    }
    Ok(report)
}
