//! The 21-byte geolocation block.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::GeoPoint;

/// Serialized size of a [`GeoLocation`].
pub const GEO_BLOCK_LEN: usize = 21;

/// The only block version the broker evaluates against geofences.
pub const GEO_VERSION: u8 = 1;

/// A position fix as carried on the wire.
///
/// Equality is bitwise on the floating point fields, so `-0.0 != 0.0` and a
/// NaN elevation equals itself. That is what "round-trips exactly" means.
#[derive(Debug, Clone, Copy)]
pub struct GeoLocation {
    pub version: u8,
    /// Decimal degrees, `[-90, 90]`.
    pub latitude: f64,
    /// Decimal degrees, `[-180, 180]`.
    pub longitude: f64,
    /// Meters above sea level.
    pub elevation: f32,
}

impl PartialEq for GeoLocation {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.latitude.to_bits() == other.latitude.to_bits()
            && self.longitude.to_bits() == other.longitude.to_bits()
            && self.elevation.to_bits() == other.elevation.to_bits()
    }
}

impl Eq for GeoLocation {}

pub(crate) fn coordinates_valid(latitude: f64, longitude: f64) -> bool {
    latitude.is_finite()
        && longitude.is_finite()
        && (-90.0..=90.0).contains(&latitude)
        && (-180.0..=180.0).contains(&longitude)
}

impl GeoLocation {
    /// A version-1 fix. Fails on out-of-range or non-finite coordinates.
    pub fn new(latitude: f64, longitude: f64, elevation: f32) -> Result<Self> {
        let g = GeoLocation { version: GEO_VERSION, latitude, longitude, elevation };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if coordinates_valid(self.latitude, self.longitude) {
            Ok(())
        } else {
            Err(Error::InvalidCoordinates)
        }
    }

    /// Whether geofence logic may use this fix. Blocks of another version are
    /// carried verbatim but never evaluated.
    pub fn is_evaluable(&self) -> bool {
        self.version == GEO_VERSION
    }

    pub fn point(&self) -> GeoPoint {
        GeoPoint { latitude: self.latitude, longitude: self.longitude }
    }

    pub fn encode(&self) -> [u8; GEO_BLOCK_LEN] {
        let mut out = [0u8; GEO_BLOCK_LEN];
        out[0] = self.version;
        out[1..9].copy_from_slice(&self.latitude.to_le_bytes());
        out[9..17].copy_from_slice(&self.longitude.to_le_bytes());
        out[17..21].copy_from_slice(&self.elevation.to_le_bytes());
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.encode());
    }

    /// Reads a block from the first 21 bytes of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let block: &[u8; GEO_BLOCK_LEN] = bytes
            .get(..GEO_BLOCK_LEN)
            .and_then(|b| b.try_into().ok())
            .ok_or(Error::MalformedPacket("truncated geolocation block"))?;
        let g = GeoLocation {
            version: block[0],
            latitude: f64::from_le_bytes(block[1..9].try_into().unwrap()),
            longitude: f64::from_le_bytes(block[9..17].try_into().unwrap()),
            elevation: f32::from_le_bytes(block[17..21].try_into().unwrap()),
        };
        g.validate()?;
        Ok(g)
    }
}
