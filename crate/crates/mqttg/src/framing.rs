use std::io::{self, Read};

use mqttg_core::packet::{decode_packet, frame_length};
use mqttg_core::Packet;

/// Largest packet accepted from the network unless configured otherwise.
pub const DEFAULT_MAX_PACKET: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] mqttg_core::Error),
    #[error("packet of {0} bytes exceeds the size limit")]
    TooLarge(usize),
}

/// Splits a byte stream into packets.
#[derive(Debug)]
pub struct FrameReader {
    buf: Vec<u8>,
    max_packet: usize,
}

impl Default for FrameReader {
    fn default() -> Self {
        FrameReader::new(DEFAULT_MAX_PACKET)
    }
}

impl FrameReader {
    pub fn new(max_packet: usize) -> Self {
        FrameReader { buf: Vec::new(), max_packet }
    }

    /// Next packet together with its raw bytes, or `None` on a clean EOF.
    pub fn read_raw(&mut self, src: &mut impl Read) -> Result<Option<(Packet, Vec<u8>)>, FrameError> {
        loop {
            if let Some(len) = frame_length(&self.buf)? {
                if len > self.max_packet {
                    return Err(FrameError::TooLarge(len));
                }
                if self.buf.len() >= len {
                    let raw: Vec<u8> = self.buf.drain(..len).collect();
                    let (packet, _) = decode_packet(&raw)?;
                    return Ok(Some((packet, raw)));
                }
            }
            let mut chunk = [0u8; 4096];
            let n = src.read(&mut chunk)?;
            if n == 0 {
                return if self.buf.is_empty() {
                    Ok(None)
                } else {
                    Err(FrameError::Io(io::ErrorKind::UnexpectedEof.into()))
                };
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }

    pub fn read(&mut self, src: &mut impl Read) -> Result<Option<Packet>, FrameError> {
        Ok(self.read_raw(src)?.map(|(p, _)| p))
    }
}
