use serde::{Deserialize, Serialize};

use super::area::{planar_intersection_area, PlanarShape};
use super::mercator::{equatorial_resolution, project, unproject};
use super::{footprint_bounds, BlockUnit, GeoError, GeoPoint, ImageFootprint, MERCATOR_MAX_LAT};

/// Image footprints covering one census unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub unit_geoid: String,
    pub footprints: Vec<ImageFootprint>,
}

/// Blocks with at least one resident, in input order.
pub fn select_populated(blocks: Vec<BlockUnit>) -> Vec<BlockUnit> {
    blocks.into_iter().filter(|b| b.population > 0).collect()
}

/// Covers the unit polygon with a grid of equally sized images anchored at
/// the north-west corner of its bounding box. Cells that do not overlap the
/// polygon are dropped; the rest are returned row-major, north to south and
/// west to east.
pub fn plan_tiles(
    unit: &BlockUnit,
    zoom: u32,
    width_px: u32,
    height_px: u32,
) -> Result<TilePlan, GeoError> {
    if width_px == 0 || height_px == 0 {
        return Err(GeoError::Degenerate("tile size must be positive".into()));
    }
    let poly = &unit.geometry;
    let b = poly.bounds();
    if b.north.abs() >= MERCATOR_MAX_LAT || b.south.abs() >= MERCATOR_MAX_LAT {
        return Err(GeoError::MercatorDomain(b.north.max(-b.south)));
    }
    if !(b.east > b.west && b.north > b.south) {
        return Err(GeoError::Degenerate(format!(
            "unit {} has an empty bounding box",
            unit.geoid
        )));
    }
    let res = equatorial_resolution(zoom)?;
    let tile_w = width_px as f64 * res;
    let tile_h = height_px as f64 * res;
    let (x0, y_top) = project(GeoPoint {
        lon: b.west,
        lat: b.north,
    });
    let (x1, y_bottom) = project(GeoPoint {
        lon: b.east,
        lat: b.south,
    });
    let cols = ((x1 - x0) / tile_w).ceil().max(1.0) as usize;
    let rows = ((y_top - y_bottom) / tile_h).ceil().max(1.0) as usize;

    // Overlap is tested in planar lon/lat; it is only a keep/drop decision.
    let shape = PlanarShape::from_polygon(poly, |p| (p.lon, p.lat));
    let origin = [0.5 * (b.west + b.east), 0.5 * (b.south + b.north)];

    let mut footprints = Vec::new();
    for r in 0..rows {
        let cy = y_top - (r as f64 + 0.5) * tile_h;
        for c in 0..cols {
            let cx = x0 + (c as f64 + 0.5) * tile_w;
            let (lon, lat) = unproject(cx, cy);
            let fp = ImageFootprint::new(GeoPoint::new(lon, lat)?, zoom, width_px, height_px)?;
            let fb = footprint_bounds(&fp)?;
            if !fb.intersects(&b) {
                continue;
            }
            let cell = fb.to_polygon()?;
            let cell_shape = PlanarShape::from_polygon(&cell, |p| (p.lon, p.lat));
            let overlap = planar_intersection_area(&shape, &cell_shape, origin);
            if overlap > 1e-9 * cell_shape.area() {
                footprints.push(fp);
            }
        }
    }
    if footprints.is_empty() {
        return Err(GeoError::Degenerate(format!(
            "unit {} produced no tiles",
            unit.geoid
        )));
    }
    Ok(TilePlan {
        unit_geoid: unit.geoid.clone(),
        footprints,
    })
}
