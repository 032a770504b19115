//! Great-circle distance, radius containment and polygon geofences.
//!
//! Everything is two-dimensional: elevation never takes part in a distance or
//! a containment test.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use libm::{asin, cos, fmod, sin, sqrt};

/// Mean Earth radius.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Perpendicular tolerance, in degrees, for "on the polygon boundary".
const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self, GeometryError> {
        if crate::geo::coordinates_valid(latitude, longitude) {
            Ok(GeoPoint { latitude, longitude })
        } else {
            Err(GeometryError::InvalidCoordinates)
        }
    }
}

/// Vertex offset of a dynamic fence, in decimal degrees from the anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offset {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeometryError {
    InvalidCoordinates,
    TooFewVertices,
    RepeatedVertex,
    Degenerate,
    SelfIntersecting,
    /// Longitude extent of 180 degrees or more.
    TooWide,
    ContainsPole,
    /// A dynamic fence whose anchor has never reported a location.
    AnchorUnknown,
    /// Anchor plus offset lands beyond a pole.
    ResolvedOutOfRange,
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryError::InvalidCoordinates => "coordinates out of range",
            GeometryError::TooFewVertices => "polygon needs at least 3 vertices",
            GeometryError::RepeatedVertex => "consecutive vertices are identical",
            GeometryError::Degenerate => "polygon has zero area or folds back on itself",
            GeometryError::SelfIntersecting => "polygon edges intersect",
            GeometryError::TooWide => "polygon spans 180 degrees of longitude or more",
            GeometryError::ContainsPole => "polygon touches or encloses a pole",
            GeometryError::AnchorUnknown => "anchor client has no known location",
            GeometryError::ResolvedOutOfRange => "resolved vertex lies beyond a pole",
        })
    }
}

impl core::error::Error for GeometryError {}

/// Haversine great-circle distance in meters on a sphere of radius
/// [`EARTH_RADIUS_M`].
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.latitude.to_radians();
    let phi2 = b.latitude.to_radians();
    let half_dphi = (phi2 - phi1) / 2.0;
    let half_dlambda = (b.longitude - a.longitude).to_radians() / 2.0;
    let s1 = sin(half_dphi);
    let s2 = sin(half_dlambda);
    let h = s1 * s1 + cos(phi1) * cos(phi2) * s2 * s2;
    2.0 * EARTH_RADIUS_M * asin(sqrt(h.min(1.0)))
}

/// `true` iff `p` is within `radius` meters of `center`; the boundary counts as inside.
pub fn inside_radius(p: GeoPoint, center: GeoPoint, radius: f64) -> bool {
    haversine_distance(p, center) <= radius
}

/// Maps a longitude into `(-180, 180]`.
pub fn normalize_longitude(lon: f64) -> f64 {
    if lon > -180.0 && lon <= 180.0 {
        return lon;
    }
    let mut r = fmod(180.0 - lon, 360.0);
    if r < 0.0 {
        r += 360.0;
    }
    if r >= 360.0 {
        r -= 360.0;
    }
    180.0 - r
}

fn wrap_delta(d: f64) -> f64 {
    normalize_longitude(d)
}

/// Planar `(x = longitude, y = latitude)` coordinates with longitudes
/// unwrapped so that consecutive vertices differ by at most 180 degrees.
fn unwrap(vertices: &[GeoPoint]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(vertices.len());
    let mut prev: Option<(f64, f64)> = None;
    for v in vertices {
        let x = match prev {
            None => v.longitude,
            Some((px, _)) => {
                let raw_prev = normalize_longitude(px);
                px + wrap_delta(v.longitude - raw_prev)
            }
        };
        prev = Some((x, v.latitude));
        out.push((x, v.latitude));
    }
    out
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn on_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> bool {
    let len = sqrt((b.0 - a.0) * (b.0 - a.0) + (b.1 - a.1) * (b.1 - a.1));
    if cross(a, b, p).abs() > BOUNDARY_EPS * len.max(1.0) {
        return false;
    }
    p.0 >= a.0.min(b.0) - BOUNDARY_EPS
        && p.0 <= a.0.max(b.0) + BOUNDARY_EPS
        && p.1 >= a.1.min(b.1) - BOUNDARY_EPS
        && p.1 <= a.1.max(b.1) + BOUNDARY_EPS
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// Shape checks shared by static vertices and dynamic offsets.
fn validate_planar(points: &[(f64, f64)]) -> Result<(), GeometryError> {
    let n = points.len();
    if n < 3 {
        return Err(GeometryError::TooFewVertices);
    }
    for i in 0..n {
        if points[i] == points[(i + 1) % n] {
            return Err(GeometryError::RepeatedVertex);
        }
    }
    let (min_x, max_x) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    if max_x - min_x >= 180.0 {
        return Err(GeometryError::TooWide);
    }
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        let c = points[(i + 2) % n];
        // consecutive edges doubling back on each other
        if cross(a, b, c) == 0.0 && (b.0 - a.0) * (c.0 - b.0) + (b.1 - a.1) * (c.1 - b.1) < 0.0 {
            return Err(GeometryError::Degenerate);
        }
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a, b, points[j], points[(j + 1) % n]) {
                return Err(GeometryError::SelfIntersecting);
            }
        }
    }
    let area2: f64 = (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    if area2 == 0.0 {
        return Err(GeometryError::Degenerate);
    }
    Ok(())
}

/// Validates a fence given by absolute vertices.
pub fn validate_vertices(vertices: &[GeoPoint]) -> Result<(), GeometryError> {
    for v in vertices {
        GeoPoint::new(v.latitude, v.longitude)?;
        if v.latitude.abs() == 90.0 {
            return Err(GeometryError::ContainsPole);
        }
    }
    let planar = unwrap(vertices);
    if let (Some(first), Some(last)) = (vertices.first(), planar.last()) {
        // Closing the ring must bring the unwrapped longitude back to where it started,
        // otherwise the ring winds around a pole.
        let closing = last.0 + wrap_delta(first.longitude - normalize_longitude(last.0));
        if (closing - first.longitude).abs() > 1e-9 {
            return Err(GeometryError::ContainsPole);
        }
    }
    validate_planar(&planar)
}

/// Even-odd point-in-polygon test in the equirectangular plane.
///
/// Longitudes are unwrapped so fences straddling the antimeridian work. Points
/// on the boundary count as inside. The polygon must satisfy
/// [`validate_vertices`].
pub fn point_in_polygon(p: GeoPoint, vertices: &[GeoPoint]) -> bool {
    if vertices.len() < 3 {
        return false;
    }
    let poly = unwrap(vertices);
    let (min_x, max_x) = poly
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| (lo.min(q.0), hi.max(q.0)));
    let mid = (min_x + max_x) / 2.0;
    let x = mid + wrap_delta(p.longitude - normalize_longitude(mid));
    let pt = (x, p.latitude);

    let mut inside = false;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if on_segment(pt, a, b) {
            return true;
        }
        if (a.1 > pt.1) != (b.1 > pt.1) {
            let x_cross = a.0 + (pt.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if pt.0 < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

/// A polygon geofence held by the broker.
#[derive(Debug, Clone, PartialEq)]
pub enum GeofencePolygon {
    /// Fixed vertices.
    Static { vertices: Vec<GeoPoint> },
    /// Vertices that follow the last known location of `anchor_client`.
    Dynamic { anchor_client: String, offsets: Vec<Offset> },
}

impl GeofencePolygon {
    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            GeofencePolygon::Static { vertices } => validate_vertices(vertices),
            GeofencePolygon::Dynamic { offsets, .. } => {
                if offsets.iter().any(|o| !o.lat.is_finite() || !o.lon.is_finite()) {
                    return Err(GeometryError::InvalidCoordinates);
                }
                if offsets.iter().any(|o| o.lat.abs() >= 90.0) {
                    return Err(GeometryError::ContainsPole);
                }
                let planar: Vec<_> = offsets.iter().map(|o| (o.lon, o.lat)).collect();
                validate_planar(&planar)
            }
        }
    }

    pub fn anchor(&self) -> Option<&str> {
        match self {
            GeofencePolygon::Static { .. } => None,
            GeofencePolygon::Dynamic { anchor_client, .. } => Some(anchor_client),
        }
    }
}

/// Concrete vertices of a fence.
///
/// Static fences come back unchanged. Dynamic fences are translated to
/// `anchor_location`, with longitudes normalized into `(-180, 180]`.
pub fn resolve_polygon(
    poly: &GeofencePolygon,
    anchor_location: Option<GeoPoint>,
) -> Result<Vec<GeoPoint>, GeometryError> {
    match poly {
        GeofencePolygon::Static { vertices } => Ok(vertices.clone()),
        GeofencePolygon::Dynamic { offsets, .. } => {
            let anchor = anchor_location.ok_or(GeometryError::AnchorUnknown)?;
            offsets
                .iter()
                .map(|o| {
                    let latitude = anchor.latitude + o.lat;
                    if latitude.abs() > 90.0 {
                        return Err(GeometryError::ResolvedOutOfRange);
                    }
                    Ok(GeoPoint { latitude, longitude: normalize_longitude(anchor.longitude + o.lon) })
                })
                .collect()
        }
    }
}
