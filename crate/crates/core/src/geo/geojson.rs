//! Minimal GeoJSON feature-collection reader for `Polygon` and
//! `MultiPolygon` geometries.

use serde_json::{Map, Value};

use super::{BlockUnit, GeoError, GeoPoint, Polygon};

/// A feature with its polygon parts and raw properties.
#[derive(Debug, Clone)]
pub struct PolygonFeature {
    pub properties: Map<String, Value>,
    pub parts: Vec<Polygon>,
}

impl PolygonFeature {
    pub fn string_property(&self, key: &str) -> Option<String> {
        match self.properties.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }

    pub fn number_property(&self, key: &str) -> Option<f64> {
        match self.properties.get(key)? {
            Value::Number(n) => n.as_f64(),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        }
    }
}

fn err(msg: impl Into<String>) -> GeoError {
    GeoError::GeoJson(msg.into())
}

fn parse_ring(v: &Value) -> Result<Vec<GeoPoint>, GeoError> {
    let arr = v.as_array().ok_or_else(|| err("ring is not an array"))?;
    arr.iter()
        .map(|c| {
            let xy = c
                .as_array()
                .ok_or_else(|| err("position is not an array"))?;
            if xy.len() < 2 {
                return Err(err("position has fewer than two coordinates"));
            }
            let lon = xy[0].as_f64().ok_or_else(|| err("non-numeric longitude"))?;
            let lat = xy[1].as_f64().ok_or_else(|| err("non-numeric latitude"))?;
            GeoPoint::new(lon, lat)
        })
        .collect()
}

fn parse_polygon(v: &Value) -> Result<Polygon, GeoError> {
    let rings = v
        .as_array()
        .ok_or_else(|| err("polygon coordinates are not an array"))?;
    let mut rings = rings.iter().map(parse_ring);
    let exterior = rings.next().ok_or_else(|| err("polygon without rings"))??;
    let holes = rings.collect::<Result<Vec<_>, _>>()?;
    Polygon::new(exterior, holes)
}

fn parse_geometry(g: &Value) -> Result<Vec<Polygon>, GeoError> {
    let kind = g
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| err("geometry without type"))?;
    let coords = g
        .get("coordinates")
        .ok_or_else(|| err("geometry without coordinates"))?;
    match kind {
        "Polygon" => Ok(vec![parse_polygon(coords)?]),
        "MultiPolygon" => coords
            .as_array()
            .ok_or_else(|| err("multipolygon coordinates are not an array"))?
            .iter()
            .map(parse_polygon)
            .collect(),
        other => Err(err(format!("unsupported geometry type {other}"))),
    }
}

/// Reads every feature of a `FeatureCollection`.
pub fn read_polygon_features(text: &str) -> Result<Vec<PolygonFeature>, GeoError> {
    let root: Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| err("not a FeatureCollection"))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let geometry = f
                .get("geometry")
                .ok_or_else(|| err(format!("feature {i} has no geometry")))?;
            let parts = parse_geometry(geometry).map_err(|e| err(format!("feature {i}: {e}")))?;
            let properties = f
                .get("properties")
                .and_then(Value::as_object)
                .cloned()
                .unwrap_or_default();
            Ok(PolygonFeature { properties, parts })
        })
        .collect()
}

/// Reads census blocks (`geoid`, `population` properties). Multipolygon
/// features become one unit per part, all sharing the geoid.
pub fn read_block_units(text: &str) -> Result<Vec<BlockUnit>, GeoError> {
    let mut out = Vec::new();
    for (i, f) in read_polygon_features(text)?.into_iter().enumerate() {
        let geoid = f
            .string_property("geoid")
            .ok_or_else(|| err(format!("feature {i} lacks a geoid")))?;
        let population = match f.properties.get("population") {
            Some(Value::Number(n)) => n
                .as_u64()
                .ok_or_else(|| err(format!("feature {i}: bad population")))?,
            _ => return Err(err(format!("feature {i} lacks an integer population"))),
        };
        for part in f.parts {
            out.push(BlockUnit::new(geoid.clone(), part, population)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multipolygon_is_exploded() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"geoid":"080010078011000","population":7},
             "geometry":{"type":"MultiPolygon","coordinates":[
                [[[0,0],[1,0],[1,1],[0,0]]],
                [[[2,2],[3,2],[3,3],[2,2]]]]}},
            {"type":"Feature","properties":{"geoid":"080010078011001","population":0},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[0,1],[0,0]]]}}]}"#;
        let units = read_block_units(text).unwrap();
        assert_eq!(units.len(), 3);
        assert_eq!(units[0].geoid, units[1].geoid);
        assert_eq!(units[2].population, 0);
    }

    #[test]
    fn missing_population_is_an_error() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"geoid":"x"},
             "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[0,1],[0,0]]]}}]}"#;
        assert!(read_block_units(text).is_err());
    }
}
