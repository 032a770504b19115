use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Codec failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Input is truncated, over-long, or structurally unreadable.
    MalformedPacket(&'static str),
    /// Input is well-formed but breaks an MQTT (or MQTTg) protocol rule.
    ProtocolViolation(&'static str),
    /// Latitude/longitude outside valid ranges, or not finite.
    InvalidCoordinates,
    /// A remaining length above 268 435 455.
    ValueTooLarge(usize),
    /// The packet value breaks the named invariant and cannot be encoded.
    Encode(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::MalformedPacket(why) => write!(f, "malformed packet: {why}"),
            Error::ProtocolViolation(why) => write!(f, "protocol violation: {why}"),
            Error::InvalidCoordinates => f.write_str("invalid coordinates"),
            Error::ValueTooLarge(n) => write!(f, "remaining length {n} exceeds 268435455"),
            Error::Encode(why) => write!(f, "cannot encode packet: {why}"),
        }
    }
}

impl core::error::Error for Error {}
