//! Wire codec, geofence geometry and broker state machine for MQTT 3.1.1
//! with embedded geolocation (MQTTg).
//!
//! The crate is `no_std` and only needs `alloc`. Nothing in here touches a
//! socket or a clock: the broker is a state machine that takes decoded
//! packets plus the current time and returns the actions to perform. The
//! `mqttg` crate wires it to TCP.
//!
//! ## Geolocation on the wire
//!
//! A geolocation block is 21 bytes: a version byte followed by latitude
//! (`f64`), longitude (`f64`) and elevation (`f32`), all little-endian. It
//! sits between the variable header and the payload.
//!
//! - `PUBLISHG` (packet type `0xF`) is a `PUBLISH` that always carries a block.
//! - `PUBACK`, `PUBREC`, `PUBREL`, `PUBCOMP`, `SUBSCRIBE`, `UNSUBSCRIBE`,
//!   `PINGREQ` and `DISCONNECT` signal a block with fixed-header flag `0x04`.
//! - A `SUBSCRIBE` entry whose options byte has `0x04` set is followed by a
//!   radius constraint (kind, radius, latitude, longitude).

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod broker;
pub mod error;
pub mod event;
pub mod geo;
pub mod geometry;
pub mod packet;
pub mod pkid;
pub mod topic;
pub mod varint;

pub use broker::{Action, Broker, ConnId, LocationRecord, LocationTable, RouteTarget};
pub use error::{Error, Result};
pub use event::{Event, EventKind};
pub use geo::{GeoLocation, GEO_BLOCK_LEN, GEO_VERSION};
pub use geometry::{GeoPoint, GeofencePolygon, GeometryError};
pub use packet::{
    decode_packet, encode_packet, frame_length, Ack, ConnAck, Connect, ConnectReturnCode,
    GeoConstraint, LastWill, Packet, PacketType, Publish, QoS, RadiusKind, SubAck, SubackCode,
    Subscribe, TopicFilter, Unsubscribe,
};
