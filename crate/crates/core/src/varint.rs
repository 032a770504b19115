//! MQTT "remaining length" variable-length integer.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Largest value representable in four bytes.
pub const MAX_REMAINING_LENGTH: usize = 268_435_455;

/// Appends the encoding of `n` to `out` and returns the number of bytes written.
pub fn encode_remaining_length(n: usize, out: &mut Vec<u8>) -> Result<usize> {
    if n > MAX_REMAINING_LENGTH {
        return Err(Error::ValueTooLarge(n));
    }
    let mut value = n;
    let mut written = 0;
    loop {
        let mut byte = (value % 128) as u8;
        value /= 128;
        if value > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        written += 1;
        if value == 0 {
            return Ok(written);
        }
    }
}

/// Number of bytes `encode_remaining_length` would produce.
pub fn remaining_length_len(n: usize) -> usize {
    match n {
        0..=127 => 1,
        128..=16_383 => 2,
        16_384..=2_097_151 => 3,
        _ => 4,
    }
}

/// Decodes a remaining length from the front of `bytes`.
///
/// Returns `Ok(None)` when more input is needed, otherwise the value and the
/// number of bytes consumed.
pub fn decode_remaining_length(bytes: &[u8]) -> Result<Option<(usize, usize)>> {
    let mut value = 0usize;
    let mut multiplier = 1usize;
    for (i, &byte) in bytes.iter().enumerate() {
        if i == 4 {
            return Err(Error::MalformedPacket("remaining length longer than 4 bytes"));
        }
        value += (byte & 0x7F) as usize * multiplier;
        if byte & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
        multiplier *= 128;
    }
    if bytes.len() >= 4 {
        return Err(Error::MalformedPacket("remaining length longer than 4 bytes"));
    }
    Ok(None)
}
