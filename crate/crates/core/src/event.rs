//! Broker event records, one per connect, disconnect, publish or location fix.

use alloc::string::String;

use crate::geo::GeoLocation;
use crate::packet::PacketType;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Connect,
    /// Clean DISCONNECT from the client.
    Disconnect,
    /// Socket closed or protocol error without a DISCONNECT.
    ConnectionLost,
    /// Any other packet worth logging: publishes and geo-carrying packets.
    Packet(PacketType),
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Connect => "CONNECT",
            EventKind::Disconnect => "DISCONNECT",
            EventKind::ConnectionLost => "CONNECTION-LOST",
            EventKind::Packet(t) => t.name(),
        }
    }
}

/// Columns: timestamp, client_id, event_kind, lat, lon, elev,
/// segment_distance_m, speed_kmh.
///
/// For disconnects `distance_m` holds the client's cumulative distance rather
/// than the last segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    /// Seconds on the broker's monotonic clock.
    pub timestamp: f64,
    pub client_id: String,
    pub kind: EventKind,
    pub location: Option<GeoLocation>,
    pub distance_m: Option<f64>,
    pub speed_kmh: Option<f64>,
}
