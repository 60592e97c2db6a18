use super::{cmp_polygons, GeoError, GeoPoint, Polygon, EARTH_RADIUS_M};

/// Spherical Lambert azimuthal equal-area projection about a center point.
#[derive(Debug, Clone, Copy)]
pub struct LocalEqualArea {
    lon0: f64,
    sin_lat0: f64,
    cos_lat0: f64,
}

impl LocalEqualArea {
    pub fn new(center: GeoPoint) -> Self {
        let lat0 = center.lat.to_radians();
        Self {
            lon0: center.lon.to_radians(),
            sin_lat0: lat0.sin(),
            cos_lat0: lat0.cos(),
        }
    }

    pub fn forward(&self, p: GeoPoint) -> (f64, f64) {
        let lat = p.lat.to_radians();
        let dlon = p.lon.to_radians() - self.lon0;
        let (sin_lat, cos_lat) = lat.sin_cos();
        let cos_dlon = dlon.cos();
        let denom = 1.0 + self.sin_lat0 * sin_lat + self.cos_lat0 * cos_lat * cos_dlon;
        let k = (2.0 / denom).sqrt();
        let x = EARTH_RADIUS_M * k * cos_lat * dlon.sin();
        let y = EARTH_RADIUS_M * k * (self.cos_lat0 * sin_lat - self.sin_lat0 * cos_lat * cos_dlon);
        (x, y)
    }

    pub fn inverse(&self, x: f64, y: f64) -> GeoPoint {
        let rho = x.hypot(y);
        if rho == 0.0 {
            return GeoPoint {
                lon: self.lon0.to_degrees(),
                lat: self.sin_lat0.asin().to_degrees(),
            };
        }
        let c = 2.0 * (rho / (2.0 * EARTH_RADIUS_M)).asin();
        let (sin_c, cos_c) = c.sin_cos();
        let lat = (cos_c * self.sin_lat0 + y * sin_c * self.cos_lat0 / rho).asin();
        let lon =
            self.lon0 + (x * sin_c).atan2(rho * self.cos_lat0 * cos_c - y * self.sin_lat0 * sin_c);
        GeoPoint {
            lon: lon.to_degrees(),
            lat: lat.to_degrees(),
        }
    }
}

type Pt = [f64; 2];

/// Rings of a polygon in planar coordinates, each with the coefficient
/// (+1 exterior, -1 hole) that turns its oriented fan into an indicator.
pub(crate) struct PlanarShape {
    rings: Vec<(Vec<Pt>, f64)>,
}

impl PlanarShape {
    pub(crate) fn from_polygon(p: &Polygon, map: impl Fn(GeoPoint) -> (f64, f64)) -> Self {
        let conv = |ring: &[GeoPoint]| -> Vec<Pt> {
            ring.iter()
                .map(|&q| {
                    let (x, y) = map(q);
                    [x, y]
                })
                .collect()
        };
        let mut rings = vec![(conv(p.exterior()), 1.0)];
        for h in p.holes() {
            rings.push((conv(h), -1.0));
        }
        Self { rings }
    }

    pub(crate) fn area(&self) -> f64 {
        self.rings
            .iter()
            .map(|(r, c)| c * signed_area(r).abs())
            .sum()
    }

    /// Signed fan triangles about `origin`, each stored counter-clockwise
    /// with its indicator weight.
    fn fan(&self, origin: Pt) -> Vec<([Pt; 3], f64)> {
        let mut tris = Vec::new();
        for (ring, coef) in &self.rings {
            let ring_sign = signed_area(ring).signum();
            let n = ring.len();
            for i in 0..n {
                let (a, b) = (ring[i], ring[(i + 1) % n]);
                let o = cross(origin, a, b);
                if o == 0.0 {
                    continue;
                }
                let w = coef * ring_sign * o.signum();
                let tri = if o > 0.0 {
                    [origin, a, b]
                } else {
                    [origin, b, a]
                };
                tris.push((tri, w));
            }
        }
        tris
    }
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn signed_area(ring: &[Pt]) -> f64 {
    let n = ring.len();
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (ring[i], ring[(i + 1) % n]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

fn tri_bounds(t: &[Pt; 3]) -> [f64; 4] {
    let mut b = [
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    ];
    for p in t {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].min(p[1]);
        b[2] = b[2].max(p[0]);
        b[3] = b[3].max(p[1]);
    }
    b
}

/// Area of the intersection of two counter-clockwise triangles
/// (Sutherland-Hodgman clipping of one by the other).
fn triangle_overlap(subject: &[Pt; 3], clip: &[Pt; 3]) -> f64 {
    let mut poly: Vec<Pt> = subject.to_vec();
    for i in 0..3 {
        if poly.is_empty() {
            return 0.0;
        }
        let (a, b) = (clip[i], clip[(i + 1) % 3]);
        let input = std::mem::take(&mut poly);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let dc = cross(a, b, cur);
            let dp = cross(a, b, prev);
            if dc >= 0.0 {
                if dp < 0.0 {
                    poly.push(edge_cut(prev, cur, dp, dc));
                }
                poly.push(cur);
            } else if dp >= 0.0 {
                poly.push(edge_cut(prev, cur, dp, dc));
            }
        }
    }
    if poly.len() < 3 {
        0.0
    } else {
        signed_area(&poly).max(0.0)
    }
}

fn edge_cut(p: Pt, q: Pt, dp: f64, dq: f64) -> Pt {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the intersection of two planar shapes via the bilinear expansion
/// of their fan indicators: each pair of signed triangles contributes its
/// convex overlap.
pub(crate) fn planar_intersection_area(a: &PlanarShape, b: &PlanarShape, origin: Pt) -> f64 {
    let fa = a.fan(origin);
    let fb = b.fan(origin);
    let bb: Vec<[f64; 4]> = fb.iter().map(|(t, _)| tri_bounds(t)).collect();
    let mut total = 0.0;
    for (ta, wa) in &fa {
        let ba = tri_bounds(ta);
        for ((tb, wb), bbx) in fb.iter().zip(&bb) {
            if ba[0] > bbx[2] || bbx[0] > ba[2] || ba[1] > bbx[3] || bbx[1] > ba[3] {
                continue;
            }
            let ov = triangle_overlap(ta, tb);
            if ov > 0.0 {
                total += wa * wb * ov;
            }
        }
    }
    total.max(0.0)
}

/// Area in square meters on a local equal-area projection about the polygon
/// center, holes subtracted.
pub fn polygon_area_m2(p: &Polygon) -> Result<f64, GeoError> {
    let frame = LocalEqualArea::new(p.center());
    let area = PlanarShape::from_polygon(p, |q| frame.forward(q)).area();
    if !(area > 0.0) {
        return Err(GeoError::Degenerate(
            "polygon has no area after removing holes".into(),
        ));
    }
    Ok(area)
}

/// Area in square meters of the geometric intersection of two polygons.
/// Symmetric in its arguments: both polygons are normalized and put in a
/// canonical order before the computation.
pub fn intersection_area_m2(a: &Polygon, b: &Polygon) -> f64 {
    let (ba, bb) = (a.bounds(), b.bounds());
    if !ba.intersects(&bb) {
        return 0.0;
    }
    let (na, nb) = (a.normalized(), b.normalized());
    let (first, second) = if cmp_polygons(&na, &nb).is_le() {
        (na, nb)
    } else {
        (nb, na)
    };
    let center = GeoPoint {
        lon: 0.5 * (ba.west.min(bb.west) + ba.east.max(bb.east)),
        lat: 0.5 * (ba.south.min(bb.south) + ba.north.max(bb.north)),
    };
    let frame = LocalEqualArea::new(center);
    let sa = PlanarShape::from_polygon(&first, |q| frame.forward(q));
    let sb = PlanarShape::from_polygon(&second, |q| frame.forward(q));
    planar_intersection_area(&sa, &sb, [0.0, 0.0])
}

/// Intersection area with both polygons projected in one caller-chosen
/// frame. Overlaps of one polygon with several others measured in the same
/// frame add up consistently.
pub fn intersection_area_in_frame_m2(a: &Polygon, b: &Polygon, frame: &LocalEqualArea) -> f64 {
    if !a.bounds().intersects(&b.bounds()) {
        return 0.0;
    }
    let sa = PlanarShape::from_polygon(a, |q| frame.forward(q));
    let sb = PlanarShape::from_polygon(b, |q| frame.forward(q));
    planar_intersection_area(&sa, &sb, [0.0, 0.0])
}
