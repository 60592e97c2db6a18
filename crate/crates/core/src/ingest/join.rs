use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, SVI_FEATURES};
use super::IngestError;
use crate::geo::{
    intersection_area_in_frame_m2, read_polygon_features, GeoPoint, LocalEqualArea, Polygon,
};

/// Relative tolerance under which two overlap areas count as tied.
const TIE_RTOL: f64 = 1e-9;

/// One polygon of an overlay layer (jurisdiction, utility territory, zip,
/// county) with its attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayFeature {
    pub id: String,
    pub parts: Vec<Polygon>,
    /// Residents, for zip layers.
    pub population: Option<f64>,
    /// Schema feature name to value; an absent key is a missing value.
    pub payload: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverlayLayer {
    pub features: Vec<OverlayFeature>,
}

impl OverlayLayer {
    pub fn new(features: Vec<OverlayFeature>, schema: &FeatureSchema) -> Result<Self, IngestError> {
        for f in &features {
            if let Some(k) = f.payload.keys().find(|k| schema.feature_index(k).is_none()) {
                return Err(IngestError::Layer {
                    id: f.id.clone(),
                    msg: format!("payload key {k:?} is not a schema feature"),
                });
            }
        }
        Ok(Self { features })
    }
}

/// Reads a GeoJSON overlay. `id_key` names the identifying property;
/// `population` is read when present; every property named like a schema
/// feature becomes payload (JSON null stays missing); other properties are
/// ignored.
pub fn read_overlay_layer(
    text: &str,
    id_key: &str,
    schema: &FeatureSchema,
) -> Result<OverlayLayer, IngestError> {
    let mut features = Vec::new();
    for (i, f) in read_polygon_features(text)?.into_iter().enumerate() {
        let id = f
            .string_property(id_key)
            .ok_or_else(|| IngestError::Layer {
                id: format!("#{i}"),
                msg: format!("missing {id_key:?} property"),
            })?;
        let mut payload = BTreeMap::new();
        for spec in &schema.features {
            if let Some(v) = f.number_property(&spec.name) {
                payload.insert(spec.name.clone(), v);
            }
        }
        features.push(OverlayFeature {
            id,
            population: f.number_property("population"),
            payload,
            parts: f.parts,
        });
    }
    OverlayLayer::new(features, schema)
}

/// The selected overlay polygon for a block group.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinChoice<'a> {
    pub feature: &'a OverlayFeature,
    /// Overlap with the block group, m².
    pub overlap_m2: f64,
}

/// Equal-area frame centered on the block group's bounding box; all
/// candidate overlaps for one block group are measured in it.
fn block_group_frame(bg: &[Polygon]) -> LocalEqualArea {
    let (mut w, mut s, mut e, mut n) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in bg {
        let b = p.bounds();
        w = w.min(b.west);
        s = s.min(b.south);
        e = e.max(b.east);
        n = n.max(b.north);
    }
    LocalEqualArea::new(GeoPoint {
        lon: 0.5 * (w + e),
        lat: 0.5 * (s + n),
    })
}

fn overlap_m2(bg: &[Polygon], f: &OverlayFeature, frame: &LocalEqualArea) -> f64 {
    let mut total = 0.0;
    for a in bg {
        for b in &f.parts {
            total += intersection_area_in_frame_m2(a, b, frame);
        }
    }
    total
}

fn overlaps<'a>(bg: &[Polygon], layer: &'a OverlayLayer) -> Vec<(&'a OverlayFeature, f64)> {
    if bg.is_empty() {
        return Vec::new();
    }
    let frame = block_group_frame(bg);
    layer
        .features
        .iter()
        .map(|f| (f, overlap_m2(bg, f, &frame)))
        .filter(|(_, a)| *a > 0.0)
        .collect()
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_RTOL * a.abs().max(b.abs())
}

/// The overlay polygon with the largest overlap; near-equal overlaps go to
/// the lexicographically smallest id.
pub fn spatial_join_largest_share<'a>(
    geoid: &str,
    bg: &[Polygon],
    layer: &'a OverlayLayer,
) -> Result<JoinChoice<'a>, IngestError> {
    let cands = overlaps(bg, layer);
    let max = cands.iter().map(|c| c.1).fold(0.0, f64::max);
    cands
        .into_iter()
        .filter(|c| tied(c.1, max))
        .min_by(|a, b| a.0.id.cmp(&b.0.id))
        .map(|(feature, overlap_m2)| JoinChoice {
            feature,
            overlap_m2,
        })
        .ok_or_else(|| IngestError::Unassigned(geoid.to_string()))
}

fn cmp_zip(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

/// Among overlapping zips, the most populous; equal populations go to the
/// numerically smaller code. A zip without a population counts as 0.
pub fn assign_zip_by_population<'a>(
    geoid: &str,
    bg: &[Polygon],
    zips: &'a OverlayLayer,
) -> Result<JoinChoice<'a>, IngestError> {
    overlaps(bg, zips)
        .into_iter()
        .min_by(|a, b| {
            let (pa, pb) = (a.0.population.unwrap_or(0.0), b.0.population.unwrap_or(0.0));
            pb.total_cmp(&pa).then_with(|| cmp_zip(&a.0.id, &b.0.id))
        })
        .map(|(feature, overlap_m2)| JoinChoice {
            feature,
            overlap_m2,
        })
        .ok_or_else(|| IngestError::Unassigned(geoid.to_string()))
}

/// Tract geoid (state + county + tract, 11 digits) of a block-group geoid.
pub fn tract_of(geoid: &str) -> Result<&str, IngestError> {
    if geoid.len() < 12 || !geoid.is_char_boundary(11) {
        return Err(IngestError::Geoid(geoid.to_string()));
    }
    Ok(&geoid[..11])
}

/// Tract geoid to the nine vulnerability components, in `SVI_FEATURES` order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TractTable {
    pub rows: BTreeMap<String, [Option<f64>; 9]>,
}

/// Reads a CSV with a `tract` column and one column per component. Empty
/// cells and negative sentinels are missing values.
pub fn read_tract_csv(text: &str) -> Result<TractTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::Parse {
                line: 1,
                msg: format!("missing column {name:?}"),
            })
    };
    let tract_col = col("tract")?;
    let cols = SVI_FEATURES
        .iter()
        .map(|n| col(n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| IngestError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let mut vals = [None; 9];
        for (slot, &c) in vals.iter_mut().zip(&cols) {
            let cell = rec[c].trim();
            if !cell.is_empty() {
                let v: f64 = cell.parse().map_err(|_| IngestError::Parse {
                    line,
                    msg: format!("not a number: {cell:?}"),
                })?;
                *slot = (v >= 0.0).then_some(v);
            }
        }
        rows.insert(rec[tract_col].to_string(), vals);
    }
    Ok(TractTable { rows })
}

/// Each block group's parent-tract components, copied verbatim.
pub fn broadcast_tract_to_blockgroups(
    geoids: &[String],
    tracts: &TractTable,
) -> Vec<Result<[Option<f64>; 9], IngestError>> {
    geoids
        .iter()
        .map(|g| {
            let t = tract_of(g)?;
            tracts
                .rows
                .get(t)
                .copied()
                .ok_or_else(|| IngestError::UnknownTract(g.clone(), t.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::polygon_area_m2;

    const D: f64 = 0.01;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        let p = |x, y| GeoPoint::new(-105.0 + x * D, 39.7 + y * D).unwrap();
        Polygon::new(vec![p(x0, y0), p(x1, y0), p(x1, y1), p(x0, y1)], vec![]).unwrap()
    }

    fn feat(id: &str, poly: Polygon, pop: Option<f64>) -> OverlayFeature {
        OverlayFeature {
            id: id.into(),
            parts: vec![poly],
            population: pop,
            payload: BTreeMap::new(),
        }
    }

    #[test]
    fn inside_one_jurisdiction() {
        let layer = OverlayLayer {
            features: vec![
                feat("b", rect(5., 5., 6., 6.), None),
                feat("a", rect(-1., -1., 2., 2.), None),
            ],
        };
        let c = spatial_join_largest_share("g", &[rect(0., 0., 1., 1.)], &layer).unwrap();
        assert_eq!(c.feature.id, "a");
        let bg_area = polygon_area_m2(&rect(0., 0., 1., 1.)).unwrap();
        assert!((c.overlap_m2 - bg_area).abs() < 1e-6 * bg_area);
    }

    #[test]
    fn sixty_forty_split() {
        let bg = rect(0., 0., 1., 1.);
        let layer = OverlayLayer {
            features: vec![
                feat("a", rect(-1., -1., 0.4, 2.), None),
                feat("b", rect(0.4, -1., 2., 2.), None),
            ],
        };
        let c = spatial_join_largest_share("g", std::slice::from_ref(&bg), &layer).unwrap();
        assert_eq!(c.feature.id, "b");
        let shares: f64 = overlaps(std::slice::from_ref(&bg), &layer)
            .iter()
            .map(|c| c.1)
            .sum();
        let area = polygon_area_m2(&bg).unwrap();
        assert!(
            (shares - area).abs() < 1e-9 * area,
            "{shares} {area} {}",
            (shares - area) / area
        );
    }

    #[test]
    fn even_split_goes_to_smaller_id() {
        let layer = OverlayLayer {
            features: vec![
                feat("b", rect(-0.5, 0., 0.5, 1.), None),
                feat("a", rect(0.5, 0., 1.5, 1.), None),
            ],
        };
        let c = spatial_join_largest_share("g", &[rect(0., 0., 1., 1.)], &layer).unwrap();
        assert_eq!(c.feature.id, "a");
    }

    #[test]
    fn no_overlap_is_unassigned() {
        let layer = OverlayLayer {
            features: vec![feat("a", rect(5., 5., 6., 6.), None)],
        };
        assert!(matches!(
            spatial_join_largest_share("g", &[rect(0., 0., 1., 1.)], &layer),
            Err(IngestError::Unassigned(_))
        ));
        assert!(assign_zip_by_population("g", &[rect(0., 0., 1., 1.)], &layer).is_err());
    }

    #[test]
    fn most_populous_zip() {
        let bg = [rect(0., 0., 1., 1.)];
        let zips = OverlayLayer {
            features: vec![
                feat("80203", rect(0., 0., 0.9, 1.), Some(12_000.)),
                feat("80202", rect(0.9, 0., 1.5, 1.), Some(30_000.)),
                feat("80204", rect(3., 3., 4., 4.), Some(90_000.)),
            ],
        };
        assert_eq!(
            assign_zip_by_population("g", &bg, &zips)
                .unwrap()
                .feature
                .id,
            "80202"
        );
        let tie = OverlayLayer {
            features: vec![
                feat("80210", rect(0., 0., 0.5, 1.), Some(5.)),
                feat("8021", rect(0.5, 0., 1., 1.), Some(5.)),
            ],
        };
        assert_eq!(
            assign_zip_by_population("g", &bg, &tie).unwrap().feature.id,
            "8021"
        );
    }

    #[test]
    fn tract_prefix() {
        assert_eq!(tract_of("080310041021").unwrap(), "08031004102");
        assert!(tract_of("0803").is_err());
    }

    #[test]
    fn broadcast_copies_and_flags() {
        let text = "tract,% Below Poverty,% Disability,% Single Parent,% Limited English,% 10+ Unit Housing,% Mobile Homes,% Ppl. > Rooms,% No Vehicle,% Unemployed\n\
                    08031004102,0.1,11.5,7,3,14.6,4.3,2.7,5.2,-999\n";
        let t = read_tract_csv(text).unwrap();
        let geoids: Vec<String> = [
            "080310041021",
            "080310041022",
            "080310041023",
            "080310099991",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let out = broadcast_tract_to_blockgroups(&geoids, &t);
        let want = t.rows["08031004102"];
        assert_eq!(want[8], None);
        for r in &out[..3] {
            let got = r.as_ref().unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
            }
        }
        assert!(matches!(out[3], Err(IngestError::UnknownTract(..))));
    }

    #[test]
    fn overlay_payload_keys_checked() {
        let schema = FeatureSchema::colorado();
        let mut f = feat("j", rect(0., 0., 1., 1.), None);
        f.payload.insert("Solar Mandate".into(), 1.0);
        assert!(OverlayLayer::new(vec![f.clone()], &schema).is_ok());
        f.payload.insert("Color".into(), 1.0);
        assert!(OverlayLayer::new(vec![f], &schema).is_err());
    }

    #[test]
    fn reads_geojson_overlay() {
        let text = r#"{"type":"FeatureCollection","features":[{"type":"Feature",
            "properties":{"id":"denver","Solar Mandate":1,"Net Metering":true,"SolSmart Awardee":null,"NAME":"x"},
            "geometry":{"type":"Polygon","coordinates":[[[-105,39.7],[-104.9,39.7],[-104.9,39.8],[-105,39.8],[-105,39.7]]]}}]}"#;
        let layer = read_overlay_layer(text, "id", &FeatureSchema::colorado()).unwrap();
        let f = &layer.features[0];
        assert_eq!(f.id, "denver");
        assert_eq!(f.payload.len(), 2);
        assert_eq!(f.payload["Net Metering"], 1.0);
        assert!(read_overlay_layer(text, "zip", &FeatureSchema::colorado()).is_err());
    }
}
