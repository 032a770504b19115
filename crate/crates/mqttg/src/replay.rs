//! Replays a route file through a broker and compares the broker's
//! accumulated distance with the route's known length.

use std::fmt;
use std::io;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use mqttg_core::QoS;

use crate::admin::AdminClient;
use crate::client::{Client, ClientConfig, ClientError};
use crate::route::Route;

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub host: String,
    pub port: u16,
    /// `host:port` of the broker's admin socket.
    pub admin: String,
    pub client_id: String,
    pub topic: String,
    pub qos: QoS,
    /// Route time runs this many times faster than wall time.
    pub speedup: f64,
}

/// A client id that will not collide with earlier replays.
pub fn unique_client_id() -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    format!("replay-{}-{}", std::process::id(), nanos % 1_000_000_000)
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("speedup must be a positive number")]
    BadSpeedup,
    #[error("route has no fixes")]
    EmptyRoute,
    #[error("client id `{0}` already has a location on the broker; pick a fresh id")]
    ClientIdInUse(String),
    #[error("broker has no location for `{0}` after the replay")]
    NoLocation(String),
    #[error("admin socket: {0}")]
    Admin(#[from] io::Error),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub client_id: String,
    pub fixes_sent: usize,
    pub broker_distance_m: f64,
    pub analytic_distance_m: f64,
    /// True when the reference length came from the route header rather
    /// than a client-side haversine sum.
    pub analytic_from_header: bool,
    pub relative_error: f64,
    /// Last speed the broker computed; scaled by `speedup` when time was
    /// compressed.
    pub broker_speed_kmh: Option<f64>,
    /// Last-segment speed from the route's own offsets.
    pub route_speed_kmh: Option<f64>,
    pub speedup: f64,
    pub wall_time: Duration,
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let source = if self.analytic_from_header { "route header" } else { "client haversine" };
        writeln!(f, "client id:          {}", self.client_id)?;
        writeln!(f, "fixes sent:         {}", self.fixes_sent)?;
        writeln!(f, "broker distance:    {:.3} m", self.broker_distance_m)?;
        writeln!(f, "analytic distance:  {:.3} m ({source})", self.analytic_distance_m)?;
        writeln!(f, "relative error:     {:.6}%", self.relative_error * 100.0)?;
        match self.broker_speed_kmh {
            Some(s) if self.speedup != 1.0 => writeln!(
                f,
                "broker last speed:  {s:.3} km/h (time-compressed x{}; route-time equivalent {:.3} km/h)",
                self.speedup,
                s / self.speedup
            )?,
            Some(s) => writeln!(f, "broker last speed:  {s:.3} km/h")?,
            None => writeln!(f, "broker last speed:  n/a")?,
        }
        match self.route_speed_kmh {
            Some(s) => writeln!(f, "route last speed:   {s:.3} km/h")?,
            None => writeln!(f, "route last speed:   n/a")?,
        }
        write!(f, "wall time:          {:.3} s", self.wall_time.as_secs_f64())
    }
}

/// Publishes one geo-tagged message per fix, paced by the fix offsets
/// divided by `speedup`, then reads the broker's location table.
pub fn replay(route: &Route, opts: &ReplayOptions) -> Result<ReplayReport, ReplayError> {
    if !(opts.speedup.is_finite() && opts.speedup > 0.0) {
        return Err(ReplayError::BadSpeedup);
    }
    let first = route.fixes.first().ok_or(ReplayError::EmptyRoute)?;
    let mut admin = AdminClient::connect(&opts.admin)?;
    if admin.dump_locations()?.iter().any(|r| r.client_id == opts.client_id) {
        return Err(ReplayError::ClientIdInUse(opts.client_id.clone()));
    }

    let current = Arc::new(Mutex::new(first.location));
    let source = current.clone();
    let config = ClientConfig::new(opts.client_id.clone(), opts.host.clone(), opts.port)
        .with_location(move || Some(*source.lock().unwrap_or_else(|e| e.into_inner())));
    let client = Client::connect(config)?;

    let started = Instant::now();
    for (i, fix) in route.fixes.iter().enumerate() {
        let due = Duration::from_secs_f64((fix.offset_seconds - first.offset_seconds) / opts.speedup);
        if let Some(wait) = due.checked_sub(started.elapsed()) {
            thread::sleep(wait);
        }
        *current.lock().unwrap_or_else(|e| e.into_inner()) = fix.location;
        client.publish(&opts.topic, format!("fix {i}"), opts.qos, false)?;
    }
    // A QoS 0 publish has no acknowledgement; a round trip guarantees the
    // broker has processed everything sent before it.
    if opts.qos == QoS::AtMostOnce {
        client.ping(Duration::from_secs(5))?;
    }
    let wall_time = started.elapsed();
    let rows = admin.dump_locations()?;
    client.disconnect()?;

    let row = rows
        .into_iter()
        .find(|r| r.client_id == opts.client_id)
        .ok_or_else(|| ReplayError::NoLocation(opts.client_id.clone()))?;
    let (analytic, from_header) = match route.total_length_m {
        Some(l) => (l, true),
        None => (route.haversine_length(), false),
    };
    let relative_error = if analytic > 0.0 {
        (row.cumulative_distance_m - analytic).abs() / analytic
    } else {
        row.cumulative_distance_m.abs()
    };
    Ok(ReplayReport {
        client_id: opts.client_id.clone(),
        fixes_sent: route.fixes.len(),
        broker_distance_m: row.cumulative_distance_m,
        analytic_distance_m: analytic,
        analytic_from_header: from_header,
        relative_error,
        broker_speed_kmh: row.last_speed_kmh,
        route_speed_kmh: route.final_speed_kmh(),
        speedup: opts.speedup,
        wall_time,
    })
}
