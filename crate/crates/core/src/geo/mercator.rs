use std::f64::consts::PI;

use super::{GeoBounds, GeoError, GeoPoint, ImageFootprint, EARTH_RADIUS_M};

/// Latitude limit of the square Web Mercator world.
pub const MERCATOR_MAX_LAT: f64 = 85.051_128_779_806_59;

const MAX_ZOOM: u32 = 30;
const TILE_SIZE_PX: f64 = 256.0;

/// Ground meters per pixel of a Web Mercator image at `lat` and `zoom`.
pub fn ground_resolution(lat: f64, zoom: u32) -> Result<f64, GeoError> {
    if !lat.is_finite() || lat.abs() > 90.0 {
        return Err(GeoError::Coordinate { lon: 0.0, lat });
    }
    let eq = equatorial_resolution(zoom)?;
    if lat.abs() == 90.0 {
        return Ok(0.0);
    }
    Ok((lat.to_radians().cos() * eq).max(0.0))
}

/// Projected (Mercator) meters per pixel; equals the ground resolution at the equator.
pub(crate) fn equatorial_resolution(zoom: u32) -> Result<f64, GeoError> {
    if zoom > MAX_ZOOM {
        return Err(GeoError::Zoom(zoom));
    }
    Ok(2.0 * PI * EARTH_RADIUS_M / (TILE_SIZE_PX * 2f64.powi(zoom as i32)))
}

pub(crate) fn project(p: GeoPoint) -> (f64, f64) {
    let x = EARTH_RADIUS_M * p.lon.to_radians();
    let y = EARTH_RADIUS_M * (PI / 4.0 + p.lat.to_radians() / 2.0).tan().ln();
    (x, y)
}

pub(crate) fn unproject(x: f64, y: f64) -> (f64, f64) {
    let lon = (x / EARTH_RADIUS_M).to_degrees();
    let lat = (2.0 * (y / EARTH_RADIUS_M).exp().atan() - PI / 2.0).to_degrees();
    (lon, lat)
}

/// Geographic bounds of the image: `width_px * gsd` meters east-west and
/// `height_px * gsd` meters north-south around the center.
pub fn footprint_bounds(fp: &ImageFootprint) -> Result<GeoBounds, GeoError> {
    let c = fp.center();
    if c.lat.abs() >= MERCATOR_MAX_LAT {
        return Err(GeoError::MercatorDomain(c.lat));
    }
    // Projected meters per pixel; ground gsd is this times cos(lat).
    let res = equatorial_resolution(fp.zoom())?;
    let (cx, cy) = project(c);
    let hw = 0.5 * fp.width_px() as f64 * res;
    let hh = 0.5 * fp.height_px() as f64 * res;
    let (west, south) = unproject(cx - hw, cy - hh);
    let (east, north) = unproject(cx + hw, cy + hh);
    if north.abs() > MERCATOR_MAX_LAT || south.abs() > MERCATOR_MAX_LAT {
        return Err(GeoError::MercatorDomain(if north.abs() > south.abs() {
            north
        } else {
            south
        }));
    }
    if fp.width_px() == 0 && fp.height_px() == 0 {
        return Ok(GeoBounds {
            west: c.lon,
            south: c.lat,
            east: c.lon,
            north: c.lat,
        });
    }
    Ok(GeoBounds {
        west,
        south,
        east,
        north,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::area::LocalEqualArea;

    #[test]
    fn equator_zoom_zero() {
        // 2*pi*6378137/256
        let r = ground_resolution(0.0, 0).unwrap();
        assert!((r - 156_543.033_928).abs() < 0.01, "{r}");
    }

    #[test]
    fn pole_is_zero() {
        assert_eq!(ground_resolution(90.0, 20).unwrap(), 0.0);
    }

    #[test]
    fn denver_zoom_20() {
        let expected =
            (39.7f64).to_radians().cos() * 2.0 * PI * 6_378_137.0 / (256.0 * 1_048_576.0);
        let r = ground_resolution(39.7, 20).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 0.1149).abs() < 0.0005, "{r}");
    }

    #[test]
    fn rejects_out_of_domain() {
        assert!(ground_resolution(91.0, 3).is_err());
        assert!(ground_resolution(10.0, 31).is_err());
        let fp = ImageFootprint::new(GeoPoint::new(0.0, 86.0).unwrap(), 20, 640, 640);
        assert!(matches!(fp, Err(GeoError::MercatorDomain(_))));
    }

    #[test]
    fn halving_per_zoom_and_even_in_latitude() {
        for z in 0..25 {
            let a = ground_resolution(33.0, z).unwrap();
            let b = ground_resolution(33.0, z + 1).unwrap();
            assert!((a / b - 2.0).abs() < 1e-12);
            assert_eq!(ground_resolution(-33.0, z).unwrap(), a);
        }
    }

    #[test]
    fn zero_size_footprint_is_its_center() {
        let c = GeoPoint::new(-104.99, 39.74).unwrap();
        let fp = ImageFootprint::new(c, 20, 0, 0).unwrap();
        let b = footprint_bounds(&fp).unwrap();
        assert_eq!(
            (b.west, b.east, b.south, b.north),
            (c.lon, c.lon, c.lat, c.lat)
        );
    }

    #[test]
    fn footprint_ground_extent_matches_gsd() {
        let c = GeoPoint::new(-104.99, 39.7).unwrap();
        let fp = ImageFootprint::new(c, 20, 640, 640).unwrap();
        let b = footprint_bounds(&fp).unwrap();
        // Measure the edges through the center in a local equal-area frame.
        let frame = LocalEqualArea::new(c);
        let (xw, _) = frame.forward(GeoPoint {
            lon: b.west,
            lat: c.lat,
        });
        let (xe, _) = frame.forward(GeoPoint {
            lon: b.east,
            lat: c.lat,
        });
        let (_, ys) = frame.forward(GeoPoint {
            lon: c.lon,
            lat: b.south,
        });
        let (_, yn) = frame.forward(GeoPoint {
            lon: c.lon,
            lat: b.north,
        });
        let want = 640.0 * fp.gsd_m_per_px();
        assert!((want - 73.5).abs() < 0.1, "{want}");
        assert!(
            ((xe - xw) - want).abs() / want < 1e-4,
            "{} vs {want}",
            xe - xw
        );
        assert!(
            ((yn - ys) - want).abs() / want < 1e-4,
            "{} vs {want}",
            yn - ys
        );
    }
}
