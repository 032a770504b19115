//! Route files and synthetic route generation.
//!
//! A route file is CSV with the columns `offset_seconds,lat,lon,elev`. Lines
//! starting with `#` are comments; a comment of the form
//! `# total_length_m=<metres>` records the analytic path length of a
//! generated route.

use std::f64::consts::PI;
use std::fmt::Write as _;

use mqttg_core::geometry::{haversine_distance, normalize_longitude, EARTH_RADIUS_M};
use mqttg_core::{GeoLocation, GeoPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteFix {
    pub offset_seconds: f64,
    pub location: GeoLocation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Route {
    pub fixes: Vec<RouteFix>,
    /// Analytic length, when the route was generated from a shape.
    pub total_length_m: Option<f64>,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("route has no fixes")]
    Empty,
    #[error("{0}")]
    Shape(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> RouteError {
    RouteError::Parse { line, message: message.into() }
}

impl Route {
    /// Sum of great-circle distances between consecutive fixes.
    pub fn haversine_length(&self) -> f64 {
        self.fixes.windows(2).map(|w| haversine_distance(w[0].location.point(), w[1].location.point())).sum()
    }

    pub fn duration(&self) -> f64 {
        match (self.fixes.first(), self.fixes.last()) {
            (Some(a), Some(b)) => b.offset_seconds - a.offset_seconds,
            _ => 0.0,
        }
    }

    /// Speed over the last segment in km/h, from the file's own offsets.
    pub fn final_speed_kmh(&self) -> Option<f64> {
        let [.., a, b] = self.fixes.as_slice() else { return None };
        let dt = b.offset_seconds - a.offset_seconds;
        (dt > 0.0).then(|| haversine_distance(a.location.point(), b.location.point()) / dt * 3.6)
    }

    pub fn parse(text: &str) -> Result<Route, RouteError> {
        let mut route = Route::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("total_length_m=") {
                    let v = v.trim().parse().map_err(|_| parse_err(line, format!("bad total length `{v}`")))?;
                    route.total_length_m = Some(v);
                } else if route.description.is_none() && !comment.is_empty() {
                    route.description = Some(comment.to_string());
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if route.fixes.is_empty() && fields[0] == "offset_seconds" {
                continue;
            }
            if fields.len() != 4 {
                return Err(parse_err(line, format!("expected 4 columns, found {}", fields.len())));
            }
            let num = |i: usize, name: &str| {
                fields[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("bad {name} `{}`", fields[i])))
            };
            let offset = num(0, "offset")?;
            let location = GeoLocation::new(num(1, "latitude")?, num(2, "longitude")?, num(3, "elevation")? as f32)
                .map_err(|e| parse_err(line, e.to_string()))?;
            if let Some(prev) = route.fixes.last() {
                if offset <= prev.offset_seconds {
                    return Err(parse_err(line, "offsets must strictly increase"));
                }
            }
            route.fixes.push(RouteFix { offset_seconds: offset, location });
        }
        if route.fixes.is_empty() {
            return Err(RouteError::Empty);
        }
        Ok(route)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(d) = &self.description {
            let _ = writeln!(out, "# {d}");
        }
        if let Some(l) = self.total_length_m {
            let _ = writeln!(out, "# total_length_m={l}");
        }
        out.push_str("offset_seconds,lat,lon,elev\n");
        for f in &self.fixes {
            let l = f.location;
            let _ = writeln!(out, "{},{},{},{}", f.offset_seconds, l.latitude, l.longitude, l.elevation);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Due east along the equator from `start.longitude`.
    EquatorLine { length_m: f64 },
    /// Due north along the meridian through `start`.
    MeridianLine { length_m: f64 },
    /// Regular polygon inscribed in a circle around `start`, closed by
    /// returning to the first vertex.
    Circle { radius_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteSpec {
    pub shape: Shape,
    /// Lines: total fixes. Circle: vertices, plus one closing fix.
    pub fixes: usize,
    pub interval_s: f64,
    pub start: GeoPoint,
    pub elevation: f32,
}

fn destination(center: GeoPoint, bearing: f64, angular: f64) -> GeoPoint {
    let (lat0, lon0) = (center.latitude.to_radians(), center.longitude.to_radians());
    let lat = (lat0.sin() * angular.cos() + lat0.cos() * angular.sin() * bearing.cos()).asin();
    let lon = lon0 + (bearing.sin() * angular.sin() * lat0.cos()).atan2(angular.cos() - lat0.sin() * lat.sin());
    GeoPoint { latitude: lat.to_degrees(), longitude: normalize_longitude(lon.to_degrees()) }
}

/// Length of a closed regular `n`-gon inscribed in a small circle of
/// surface radius `r` metres.
pub fn circle_route_length(radius_m: f64, n: usize) -> f64 {
    let rho = radius_m / EARTH_RADIUS_M;
    n as f64 * 2.0 * EARTH_RADIUS_M * (rho.sin() * (PI / n as f64).sin()).asin()
}

pub fn generate(spec: &RouteSpec) -> Result<Route, RouteError> {
    let shape_err = |m: &str| Err(RouteError::Shape(m.into()));
    if !(spec.interval_s.is_finite() && spec.interval_s > 0.0) {
        return shape_err("interval must be positive");
    }
    let n = spec.fixes;
    let (points, total, description) = match spec.shape {
        Shape::EquatorLine { length_m } | Shape::MeridianLine { length_m } => {
            if n < 2 {
                return shape_err("a line needs at least 2 fixes");
            }
            if !(length_m.is_finite() && length_m > 0.0) {
                return shape_err("length must be positive");
            }
            let span = (length_m / EARTH_RADIUS_M).to_degrees();
            let step = |k: usize| span * k as f64 / (n - 1) as f64;
            let points: Vec<_> = if let Shape::EquatorLine { .. } = spec.shape {
                if span >= 180.0 {
                    return shape_err("equator line must be shorter than half the circumference");
                }
                (0..n)
                    .map(|k| GeoPoint { latitude: 0.0, longitude: normalize_longitude(spec.start.longitude + step(k)) })
                    .collect()
            } else {
                if spec.start.latitude + span > 90.0 {
                    return shape_err("meridian line would pass the north pole");
                }
                (0..n).map(|k| GeoPoint { latitude: spec.start.latitude + step(k), longitude: spec.start.longitude }).collect()
            };
            let kind = if matches!(spec.shape, Shape::EquatorLine { .. }) { "equator" } else { "meridian" };
            (points, length_m, format!("{kind} line, {length_m} m, {n} fixes every {} s", spec.interval_s))
        }
        Shape::Circle { radius_m } => {
            if n < 3 {
                return shape_err("a circle needs at least 3 vertices");
            }
            if !(radius_m.is_finite() && radius_m > 0.0 && radius_m / EARTH_RADIUS_M < PI / 2.0) {
                return shape_err("radius must be positive and under a quarter circumference");
            }
            let rho = radius_m / EARTH_RADIUS_M;
            let mut points: Vec<_> =
                (0..n).map(|k| destination(spec.start, 2.0 * PI * k as f64 / n as f64, rho)).collect();
            points.push(points[0]);
            (points, circle_route_length(radius_m, n), format!("circle, radius {radius_m} m, {n} vertices every {} s", spec.interval_s))
        }
    };
    let fixes = points
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            GeoLocation::new(p.latitude, p.longitude, spec.elevation)
                .map(|location| RouteFix { offset_seconds: k as f64 * spec.interval_s, location })
                .map_err(|e| RouteError::Shape(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok(Route { fixes, total_length_m: Some(total), description: Some(description) })
}
