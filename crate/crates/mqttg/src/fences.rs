//! Fence configuration lines.
//!
//! ```text
//! # owner     topic          kind    points...
//! truck-7     depot/alerts   static  52.0,4.0 52.0,4.1 52.1,4.1
//! dispatcher  fleet/+/pos    dynamic truck-7 -0.01,-0.01 -0.01,0.01 0.01,0.0
//! ```
//!
//! Static points are `lat,lon`; dynamic points are `dlat,dlon` offsets from
//! the anchor client's last known location. `#` starts a comment.

use std::fmt;
use std::str::FromStr;

use mqttg_core::geometry::Offset;
use mqttg_core::topic::validate_filter;
use mqttg_core::{GeoPoint, GeofencePolygon};

#[derive(Debug, Clone, PartialEq)]
pub struct FenceSpec {
    pub owner: String,
    pub topic: String,
    pub polygon: GeofencePolygon,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct FenceParseError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct FenceFileError {
    pub line: usize,
    pub message: String,
}

fn pair(token: &str) -> Result<(f64, f64), FenceParseError> {
    let bad = || FenceParseError(format!("expected `a,b` number pair, got `{token}`"));
    let (a, b) = token.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    Ok((a, b))
}

impl FromStr for FenceSpec {
    type Err = FenceParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut tokens = line.split_whitespace();
        let mut field = |name: &str| {
            tokens.next().map(str::to_string).ok_or_else(|| FenceParseError(format!("missing {name}")))
        };
        let owner = field("client id")?;
        let topic = field("topic")?;
        let kind = field("fence kind")?;
        validate_filter(&topic).map_err(|e| FenceParseError(format!("bad topic filter `{topic}`: {e}")))?;
        let polygon = match kind.as_str() {
            "static" => {
                let vertices = tokens
                    .map(|t| {
                        let (lat, lon) = pair(t)?;
                        GeoPoint::new(lat, lon).map_err(|e| FenceParseError(format!("vertex `{t}`: {e}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                GeofencePolygon::Static { vertices }
            }
            "dynamic" => {
                let anchor_client =
                    tokens.next().ok_or_else(|| FenceParseError("missing anchor client id".into()))?.to_string();
                let offsets = tokens
                    .map(|t| pair(t).map(|(lat, lon)| Offset { lat, lon }))
                    .collect::<Result<Vec<_>, _>>()?;
                GeofencePolygon::Dynamic { anchor_client, offsets }
            }
            other => return Err(FenceParseError(format!("unknown fence kind `{other}`"))),
        };
        polygon.validate().map_err(|e| FenceParseError(format!("bad polygon: {e}")))?;
        Ok(FenceSpec { owner, topic, polygon })
    }
}

impl fmt::Display for FenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.owner, self.topic)?;
        match &self.polygon {
            GeofencePolygon::Static { vertices } => {
                f.write_str(" static")?;
                for v in vertices {
                    write!(f, " {},{}", v.latitude, v.longitude)?;
                }
            }
            GeofencePolygon::Dynamic { anchor_client, offsets } => {
                write!(f, " dynamic {anchor_client}")?;
                for o in offsets {
                    write!(f, " {},{}", o.lat, o.lon)?;
                }
            }
        }
        Ok(())
    }
}

/// Drops comments. A `#` opens a comment when it starts the line or starts a
/// token after the topic; inside the topic it is the multi-level wildcard.
fn strip_comment(line: &str) -> String {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let end = tokens
        .iter()
        .enumerate()
        .position(|(i, t)| t.starts_with('#') && i != 1)
        .unwrap_or(tokens.len());
    tokens[..end].join(" ")
}

/// Parses a whole fence file. Errors carry 1-based line numbers.
pub fn parse_fence_file(text: &str) -> Result<Vec<FenceSpec>, FenceFileError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l)))
        .filter(|(_, l)| !l.is_empty())
        .map(|(line, l)| l.parse().map_err(|FenceParseError(message)| FenceFileError { line, message }))
        .collect()
}
