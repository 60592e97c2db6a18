//! Geodesy and planar geometry: WGS84 points and polygons, Web Mercator
//! image footprints, tile planning over census units, and equal-area
//! polygon measurement.

mod area;
mod geojson;
mod mercator;
mod plan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use area::{
    intersection_area_in_frame_m2, intersection_area_m2, polygon_area_m2, LocalEqualArea,
};
pub use geojson::{read_block_units, read_polygon_features, PolygonFeature};
pub use mercator::{footprint_bounds, ground_resolution, MERCATOR_MAX_LAT};
pub use plan::{plan_tiles, select_populated, TilePlan};

/// Sphere radius used throughout (WGS84 semi-major axis, as in Web Mercator).
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("coordinate out of range: lon {lon}, lat {lat}")]
    Coordinate { lon: f64, lat: f64 },
    #[error("latitude {0} outside the Web Mercator domain")]
    MercatorDomain(f64),
    #[error("zoom level {0} is not supported")]
    Zoom(u32),
    #[error("degenerate polygon: {0}")]
    Degenerate(String),
    #[error("invalid polygon: {0}")]
    Invalid(String),
    #[error("invalid block unit: {0}")]
    BlockUnit(String),
    #[error("geojson: {0}")]
    GeoJson(String),
}

/// A WGS84 longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self, GeoError> {
        if !lon.is_finite() || !lat.is_finite() || lon.abs() > 180.0 || lat.abs() > 90.0 {
            return Err(GeoError::Coordinate { lon, lat });
        }
        Ok(Self { lon, lat })
    }
}

/// Axis-aligned geographic bounds in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
}

impl GeoBounds {
    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lon >= self.west && p.lon <= self.east && p.lat >= self.south && p.lat <= self.north
    }

    pub fn intersects(&self, other: &GeoBounds) -> bool {
        self.west <= other.east
            && other.west <= self.east
            && self.south <= other.north
            && other.south <= self.north
    }

    /// The bounds as a counter-clockwise rectangle polygon.
    pub fn to_polygon(&self) -> Result<Polygon, GeoError> {
        Polygon::new(
            vec![
                GeoPoint::new(self.west, self.south)?,
                GeoPoint::new(self.east, self.south)?,
                GeoPoint::new(self.east, self.north)?,
                GeoPoint::new(self.west, self.north)?,
            ],
            vec![],
        )
    }
}

/// A simple polygon with optional holes. Rings are stored open (the closing
/// vertex is implicit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    exterior: Vec<GeoPoint>,
    holes: Vec<Vec<GeoPoint>>,
}

impl Polygon {
    /// Builds a validated polygon. A repeated closing vertex is dropped.
    pub fn new(exterior: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>) -> Result<Self, GeoError> {
        let exterior = open_ring(exterior);
        check_ring(&exterior, "exterior")?;
        if ring_signed_area_deg(&exterior).abs() == 0.0 {
            return Err(GeoError::Degenerate("exterior ring has zero area".into()));
        }
        let mut opened = Vec::with_capacity(holes.len());
        for (i, hole) in holes.into_iter().enumerate() {
            let hole = open_ring(hole);
            check_ring(&hole, &format!("hole {i}"))?;
            for p in &hole {
                if !point_in_ring_or_boundary(*p, &exterior) {
                    return Err(GeoError::Invalid(format!(
                        "hole {i} is not inside the exterior"
                    )));
                }
            }
            opened.push(hole);
        }
        Ok(Self {
            exterior,
            holes: opened,
        })
    }

    pub fn exterior(&self) -> &[GeoPoint] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<GeoPoint>] {
        &self.holes
    }

    pub fn bounds(&self) -> GeoBounds {
        let mut b = GeoBounds {
            west: f64::INFINITY,
            south: f64::INFINITY,
            east: f64::NEG_INFINITY,
            north: f64::NEG_INFINITY,
        };
        for p in &self.exterior {
            b.west = b.west.min(p.lon);
            b.east = b.east.max(p.lon);
            b.south = b.south.min(p.lat);
            b.north = b.north.max(p.lat);
        }
        b
    }

    /// Center of the bounding box; the origin of the local equal-area frame.
    pub fn center(&self) -> GeoPoint {
        let b = self.bounds();
        GeoPoint {
            lon: 0.5 * (b.west + b.east),
            lat: 0.5 * (b.south + b.north),
        }
    }

    /// Point-in-polygon in planar lon/lat, boundary counted as inside.
    pub fn contains(&self, p: GeoPoint) -> bool {
        if !point_in_ring_or_boundary(p, &self.exterior) {
            return false;
        }
        !self
            .holes
            .iter()
            .any(|h| point_in_ring(p, h) && !on_ring_boundary(p, h))
    }

    /// Rings with a canonical orientation (exterior CCW, holes CW) and the
    /// lexicographically smallest vertex first.
    pub fn normalized(&self) -> Polygon {
        let ext = canonical_ring(&self.exterior, true);
        let mut holes: Vec<_> = self
            .holes
            .iter()
            .map(|h| canonical_ring(h, false))
            .collect();
        holes.sort_by(|a, b| cmp_rings(a, b));
        Polygon {
            exterior: ext,
            holes,
        }
    }
}

/// A census block with its population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockUnit {
    pub geoid: String,
    pub geometry: Polygon,
    pub population: u64,
}

impl BlockUnit {
    pub fn new(
        geoid: impl Into<String>,
        geometry: Polygon,
        population: u64,
    ) -> Result<Self, GeoError> {
        let geoid = geoid.into();
        if geoid.is_empty() {
            return Err(GeoError::BlockUnit("empty geoid".into()));
        }
        Ok(Self {
            geoid,
            geometry,
            population,
        })
    }
}

/// The ground footprint of one fixed-size image centered on a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageFootprint {
    center: GeoPoint,
    zoom: u32,
    width_px: u32,
    height_px: u32,
    gsd_m_per_px: f64,
}

impl ImageFootprint {
    pub fn new(
        center: GeoPoint,
        zoom: u32,
        width_px: u32,
        height_px: u32,
    ) -> Result<Self, GeoError> {
        if center.lat.abs() >= MERCATOR_MAX_LAT {
            return Err(GeoError::MercatorDomain(center.lat));
        }
        let gsd_m_per_px = ground_resolution(center.lat, zoom)?;
        Ok(Self {
            center,
            zoom,
            width_px,
            height_px,
            gsd_m_per_px,
        })
    }

    pub fn center(&self) -> GeoPoint {
        self.center
    }
    pub fn zoom(&self) -> u32 {
        self.zoom
    }
    pub fn width_px(&self) -> u32 {
        self.width_px
    }
    pub fn height_px(&self) -> u32 {
        self.height_px
    }
    pub fn gsd_m_per_px(&self) -> f64 {
        self.gsd_m_per_px
    }
}

fn open_ring(mut ring: Vec<GeoPoint>) -> Vec<GeoPoint> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

fn check_ring(ring: &[GeoPoint], what: &str) -> Result<(), GeoError> {
    for p in ring {
        GeoPoint::new(p.lon, p.lat)?;
    }
    let mut distinct: Vec<GeoPoint> = Vec::new();
    for p in ring {
        if !distinct.contains(p) {
            distinct.push(*p);
        }
    }
    if distinct.len() < 3 {
        return Err(GeoError::Degenerate(format!(
            "{what} has fewer than 3 distinct vertices"
        )));
    }
    let n = ring.len();
    for i in 0..n {
        if ring[i] == ring[(i + 1) % n] {
            return Err(GeoError::Invalid(format!("{what} repeats vertex {i}")));
        }
    }
    // O(n^2) check over non-adjacent edge pairs.
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return Err(GeoError::Invalid(format!(
                    "{what} self-intersects (edges {i} and {j})"
                )));
            }
        }
    }
    Ok(())
}

pub(crate) fn orient(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn on_segment(a: GeoPoint, b: GeoPoint, p: GeoPoint) -> bool {
    p.lon >= a.lon.min(b.lon)
        && p.lon <= a.lon.max(b.lon)
        && p.lat >= a.lat.min(b.lat)
        && p.lat <= a.lat.max(b.lat)
}

fn segments_intersect(a1: GeoPoint, a2: GeoPoint, b1: GeoPoint, b2: GeoPoint) -> bool {
    let d1 = orient(b1, b2, a1);
    let d2 = orient(b1, b2, a2);
    let d3 = orient(a1, a2, b1);
    let d4 = orient(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(b1, b2, a1))
        || (d2 == 0.0 && on_segment(b1, b2, a2))
        || (d3 == 0.0 && on_segment(a1, a2, b1))
        || (d4 == 0.0 && on_segment(a1, a2, b2))
}

pub(crate) fn ring_signed_area_deg(ring: &[GeoPoint]) -> f64 {
    let n = ring.len();
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (ring[i], ring[(i + 1) % n]);
        s += p.lon * q.lat - q.lon * p.lat;
    }
    0.5 * s
}

fn point_in_ring(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn on_ring_boundary(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    (0..n).any(|i| {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        orient(a, b, p) == 0.0 && on_segment(a, b, p)
    })
}

fn point_in_ring_or_boundary(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    on_ring_boundary(p, ring) || point_in_ring(p, ring)
}

fn cmp_points(a: &GeoPoint, b: &GeoPoint) -> std::cmp::Ordering {
    a.lon.total_cmp(&b.lon).then(a.lat.total_cmp(&b.lat))
}

fn cmp_rings(a: &[GeoPoint], b: &[GeoPoint]) -> std::cmp::Ordering {
    for (p, q) in a.iter().zip(b) {
        let c = cmp_points(p, q);
        if c.is_ne() {
            return c;
        }
    }
    a.len().cmp(&b.len())
}

fn canonical_ring(ring: &[GeoPoint], ccw: bool) -> Vec<GeoPoint> {
    let mut r = ring.to_vec();
    if (ring_signed_area_deg(&r) > 0.0) != ccw {
        r.reverse();
    }
    let start = (0..r.len())
        .min_by(|&i, &j| cmp_points(&r[i], &r[j]))
        .unwrap_or(0);
    r.rotate_left(start);
    r
}

pub(crate) fn cmp_polygons(a: &Polygon, b: &Polygon) -> std::cmp::Ordering {
    cmp_rings(&a.exterior, &b.exterior).then_with(|| {
        for (h, k) in a.holes.iter().zip(&b.holes) {
            let c = cmp_rings(h, k);
            if c.is_ne() {
                return c;
            }
        }
        a.holes.len().cmp(&b.holes.len())
    })
}
