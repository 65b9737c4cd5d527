//! Benchmark payload layout.
//!
//! Every published message starts with a fixed 16-byte header stamped from
//! the process clock, so the subscriber can compute one-way latency without
//! any cross-host clock agreement:
//!
//! ```text
//! [0..4)   magic "MQBK"
//! [4..12)  send timestamp, ns on the process clock, u64 big-endian
//! [12..16) publisher-local sequence number, u32 big-endian
//! [16..)   filler up to the requested size
//! ```
//!
//! Sized payloads fill with 0x5A; the offset test instead appends the fixed
//! string `hello world`, giving a 27-byte message.

use crate::clock;

pub const MAGIC: [u8; 4] = *b"MQBK";
pub const HEADER_BYTES: usize = 16;

/// Filler appended by the offset test.
pub const OFFSET_TEXT: &[u8] = b"hello world";

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PayloadError {
    #[error("payload size {0} is below the {HEADER_BYTES}-byte header")]
    SizeTooSmall(usize),
    #[error("payload of {0} bytes is too short to carry a header")]
    TooShort(usize),
    #[error("payload does not start with the benchmark magic")]
    BadMagic,
    #[error("send timestamp is zero")]
    ZeroTimestamp,
    #[error("received before sent; clocks are not comparable")]
    ReceivedBeforeSent,
}

fn header(sequence: u32) -> [u8; HEADER_BYTES] {
    let mut h = [0u8; HEADER_BYTES];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..12].copy_from_slice(&clock::now_ns().to_be_bytes());
    h[12..16].copy_from_slice(&sequence.to_be_bytes());
    h
}

/// Build a payload of exactly `size` bytes, stamped now.
pub fn make_bench_payload(size: usize, sequence: u32) -> Result<Vec<u8>, PayloadError> {
    if size < HEADER_BYTES {
        return Err(PayloadError::SizeTooSmall(size));
    }
    let mut out = vec![0x5A; size];
    out[..HEADER_BYTES].copy_from_slice(&header(sequence));
    Ok(out)
}

/// Build the offset-test payload: header plus `hello world`, stamped now.
pub fn make_offset_payload(sequence: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + OFFSET_TEXT.len());
    out.extend_from_slice(&header(sequence));
    out.extend_from_slice(OFFSET_TEXT);
    out
}

/// A latency reading recovered from a received payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extracted {
    pub latency_ns: u64,
    pub sent_ns: u64,
    pub sequence: u32,
}

/// Recover the send timestamp from `payload` and subtract it from
/// `received_ns` (same process clock). Malformed payloads are reported so
/// the caller can count them as exclusions rather than records.
pub fn extract_latency(payload: &[u8], received_ns: u64) -> Result<Extracted, PayloadError> {
    if payload.len() < HEADER_BYTES {
        return Err(PayloadError::TooShort(payload.len()));
    }
    if payload[0..4] != MAGIC {
        return Err(PayloadError::BadMagic);
    }
    let sent_ns = u64::from_be_bytes(payload[4..12].try_into().unwrap());
    if sent_ns == 0 {
        return Err(PayloadError::ZeroTimestamp);
    }
    if received_ns < sent_ns {
        return Err(PayloadError::ReceivedBeforeSent);
    }
    let sequence = u32::from_be_bytes(payload[12..16].try_into().unwrap());
    Ok(Extracted { latency_ns: received_ns - sent_ns, sent_ns, sequence })
}
