//! MQTTg over TCP: broker daemon, client library, admin socket, file formats
//! and the route replay harness.
//!
//! Protocol logic lives in [`mqttg_core`]; this crate adds sockets, threads,
//! clocks and files.

pub mod admin;
pub mod client;
pub mod eventlog;
pub mod fences;
pub mod framing;
pub mod replay;
pub mod route;
pub mod server;

pub use client::{Client, ClientConfig, ClientError, GeoMode, InboundMessage, LocationSource};
pub use server::{BrokerConfig, BrokerHandle};

pub use mqttg_core as core;
