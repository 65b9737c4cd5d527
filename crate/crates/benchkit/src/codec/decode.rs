//! Incremental packet decoding.
//!
//! `decode_packet` is pure over a byte slice: callers append bytes to a
//! buffer and call again until it yields a packet or a malformed verdict.
//! It never reads past the declared remaining length, so pipelined packets
//! in one buffer decode one at a time.

use super::topic::{validate_topic_filter, validate_topic_name};
use super::{
    ConnAck, Connect, ConnectReturnCode, ControlPacket, DecodeError, DecodeOutcome, FixedHeader,
    PacketType, Publish, QoS, SubAck, SubAckReturn, Subscribe, Unsubscribe,
};

/// Decode a remaining-length varint from the start of `buf`.
///
/// Returns `Ok(Some((value, consumed)))` for a complete varint, `Ok(None)`
/// when more bytes are needed, and an error when a fourth byte still carries
/// the continuation bit (2.2.3: at most four bytes).
pub fn decode_remaining_length(buf: &[u8]) -> Result<Option<(u32, usize)>, DecodeError> {
    let mut value: u32 = 0;
    for (i, &byte) in buf.iter().enumerate().take(4) {
        value |= u32::from(byte & 0x7F) << (7 * i);
        if byte & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
        if i == 3 {
            return Err(DecodeError::RemainingLengthTooLong);
        }
    }
    Ok(None)
}

/// Flag bits each non-PUBLISH type must carry (2.2.2-1).
fn required_flags(packet_type: PacketType) -> Option<u8> {
    match packet_type {
        PacketType::Publish => None,
        PacketType::Subscribe | PacketType::Unsubscribe => Some(0b0010),
        _ => Some(0b0000),
    }
}

/// Validate the first byte and return (type, flags), or the malformed reason.
fn check_first_byte(first: u8) -> Result<(PacketType, u8), DecodeError> {
    let packet_type = PacketType::try_from(first >> 4)?;
    let flags = first & 0x0F;
    if let Some(required) = required_flags(packet_type) {
        if flags != required {
            return Err(DecodeError::BadFlags { packet: packet_type, flags });
        }
    } else {
        // PUBLISH: validate qos bits and dup/qos coupling up front so a
        // malformed stream is reported on the first byte.
        let qos = (flags >> 1) & 0b11;
        if qos == 3 {
            return Err(DecodeError::BadQoS(3));
        }
        if qos == 2 {
            return Err(DecodeError::UnsupportedQoS);
        }
        if qos == 0 && flags & 0b1000 != 0 {
            return Err(DecodeError::DupWithoutQoS);
        }
    }
    Ok((packet_type, flags))
}

/// How the framing scanner sees the start of a buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameStatus {
    /// Not enough bytes to delimit a frame; at least this many more needed.
    Need(usize),
    /// A complete frame of exactly this many bytes starts the buffer.
    Ready(usize),
    /// The buffer does not start with a valid frame.
    Invalid(DecodeError),
}

/// Delimit the next packet without parsing its body.
///
/// The impairment proxy uses this to relay whole frames verbatim: it
/// validates only the fixed header and varint, so inner payloads it never
/// inspects cannot make it reject traffic.
pub fn frame_length(buf: &[u8]) -> FrameStatus {
    if buf.is_empty() {
        return FrameStatus::Need(2);
    }
    if let Err(reason) = check_first_byte(buf[0]) {
        return FrameStatus::Invalid(reason);
    }
    match decode_remaining_length(&buf[1..]) {
        Err(reason) => FrameStatus::Invalid(reason),
        Ok(None) => FrameStatus::Need(1),
        Ok(Some((remaining, consumed))) => {
            let total = 1 + consumed + remaining as usize;
            if buf.len() < total {
                FrameStatus::Need(total - buf.len())
            } else {
                FrameStatus::Ready(total)
            }
        }
    }
}

/// Decode the packet at the start of `buf`, if complete.
pub fn decode_packet(buf: &[u8]) -> DecodeOutcome {
    if buf.is_empty() {
        return DecodeOutcome::NeedMoreBytes { minimum_additional: 2 };
    }
    let (packet_type, flags) = match check_first_byte(buf[0]) {
        Ok(pair) => pair,
        Err(reason) => return DecodeOutcome::Malformed { reason },
    };
    let (remaining, varint_len) = match decode_remaining_length(&buf[1..]) {
        Err(reason) => return DecodeOutcome::Malformed { reason },
        Ok(None) => return DecodeOutcome::NeedMoreBytes { minimum_additional: 1 },
        Ok(Some(pair)) => pair,
    };
    let total = 1 + varint_len + remaining as usize;
    if buf.len() < total {
        return DecodeOutcome::NeedMoreBytes { minimum_additional: total - buf.len() };
    }
    let header = FixedHeader {
        packet_type,
        dup: flags & 0b1000 != 0,
        qos: (flags >> 1) & 0b11,
        retain: flags & 0b0001 != 0,
        remaining_length: remaining,
    };
    match parse_body(header, &buf[1 + varint_len..total]) {
        Ok(packet) => DecodeOutcome::Decoded { packet, consumed: total },
        Err(reason) => DecodeOutcome::Malformed { reason },
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        if self.remaining() < 1 {
            return Err(DecodeError::LengthMismatch);
        }
        let b = self.buf[self.pos];
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        if self.remaining() < 2 {
            return Err(DecodeError::LengthMismatch);
        }
        let v = u16::from_be_bytes([self.buf[self.pos], self.buf[self.pos + 1]]);
        self.pos += 2;
        Ok(v)
    }

    /// A u16-length-prefixed MQTT string: valid UTF-8, no embedded nul.
    fn string(&mut self) -> Result<String, DecodeError> {
        let len = self.u16()? as usize;
        if self.remaining() < len {
            return Err(DecodeError::LengthMismatch);
        }
        let bytes = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        let s = std::str::from_utf8(bytes).map_err(|_| DecodeError::InvalidUtf8)?;
        if s.contains('\0') {
            return Err(DecodeError::EmbeddedNul);
        }
        Ok(s.to_owned())
    }

    fn rest(&mut self) -> Vec<u8> {
        let out = self.buf[self.pos..].to_vec();
        self.pos = self.buf.len();
        out
    }

    /// The declared remaining length must be fully consumed.
    fn finish(self) -> Result<(), DecodeError> {
        if self.remaining() != 0 {
            return Err(DecodeError::LengthMismatch);
        }
        Ok(())
    }
}

fn nonzero_packet_id(id: u16) -> Result<u16, DecodeError> {
    if id == 0 {
        return Err(DecodeError::ZeroPacketId);
    }
    Ok(id)
}

fn parse_body(header: FixedHeader, body: &[u8]) -> Result<ControlPacket, DecodeError> {
    let mut r = Reader::new(body);
    match header.packet_type {
        PacketType::Connect => {
            let protocol = r.string()?;
            let level = r.u8()?;
            if protocol != "MQTT" || level != 4 {
                return Err(DecodeError::UnsupportedProtocol);
            }
            let connect_flags = r.u8()?;
            if connect_flags & 0b0000_0001 != 0 {
                return Err(DecodeError::ReservedBits);
            }
            // Will, username, and password are out of scope (non-goals).
            if connect_flags & 0b1111_1100 != 0 {
                return Err(DecodeError::UnsupportedConnectFlags);
            }
            let keep_alive_s = r.u16()?;
            let client_id = r.string()?;
            r.finish()?;
            Ok(ControlPacket::Connect(Connect {
                client_id,
                keep_alive_s,
                clean_session: connect_flags & 0b0000_0010 != 0,
            }))
        }
        PacketType::ConnAck => {
            let ack_flags = r.u8()?;
            if ack_flags & !0b0000_0001 != 0 {
                return Err(DecodeError::ReservedBits);
            }
            let return_code = ConnectReturnCode::try_from(r.u8()?)?;
            r.finish()?;
            Ok(ControlPacket::ConnAck(ConnAck {
                session_present: ack_flags & 1 != 0,
                return_code,
            }))
        }
        PacketType::Publish => {
            let topic = r.string()?;
            validate_topic_name(&topic)?;
            let qos = QoS::try_from(header.qos)?;
            let packet_id = if qos == QoS::AtLeastOnce {
                Some(nonzero_packet_id(r.u16()?)?)
            } else {
                None
            };
            let payload = r.rest();
            Ok(ControlPacket::Publish(Publish {
                dup: header.dup,
                qos,
                retain: header.retain,
                topic,
                packet_id,
                payload,
            }))
        }
        PacketType::PubAck => {
            let packet_id = nonzero_packet_id(r.u16()?)?;
            r.finish()?;
            Ok(ControlPacket::PubAck { packet_id })
        }
        PacketType::Subscribe => {
            let packet_id = nonzero_packet_id(r.u16()?)?;
            let mut filters = Vec::new();
            while r.remaining() > 0 {
                let filter = r.string()?;
                validate_topic_filter(&filter)?;
                let qos = QoS::try_from(r.u8()?)?;
                filters.push((filter, qos));
            }
            if filters.is_empty() {
                return Err(DecodeError::EmptyEntries);
            }
            Ok(ControlPacket::Subscribe(Subscribe { packet_id, filters }))
        }
        PacketType::SubAck => {
            let packet_id = nonzero_packet_id(r.u16()?)?;
            let mut returns = Vec::new();
            while r.remaining() > 0 {
                returns.push(SubAckReturn::try_from(r.u8()?)?);
            }
            if returns.is_empty() {
                return Err(DecodeError::EmptyEntries);
            }
            Ok(ControlPacket::SubAck(SubAck { packet_id, returns }))
        }
        PacketType::Unsubscribe => {
            let packet_id = nonzero_packet_id(r.u16()?)?;
            let mut filters = Vec::new();
            while r.remaining() > 0 {
                let filter = r.string()?;
                validate_topic_filter(&filter)?;
                filters.push(filter);
            }
            if filters.is_empty() {
                return Err(DecodeError::EmptyEntries);
            }
            Ok(ControlPacket::Unsubscribe(Unsubscribe { packet_id, filters }))
        }
        PacketType::UnsubAck => {
            let packet_id = nonzero_packet_id(r.u16()?)?;
            r.finish()?;
            Ok(ControlPacket::UnsubAck { packet_id })
        }
        PacketType::PingReq => {
            r.finish()?;
            Ok(ControlPacket::PingReq)
        }
        PacketType::PingResp => {
            r.finish()?;
            Ok(ControlPacket::PingResp)
        }
        PacketType::Disconnect => {
            r.finish()?;
            Ok(ControlPacket::Disconnect)
        }
    }
}
