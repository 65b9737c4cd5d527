//! Packet encoding.
//!
//! Encoding validates the same invariants decoding enforces, so every value
//! `encode_packet` accepts survives a round trip.

use super::topic::{validate_topic_filter, validate_topic_name};
use super::{ControlPacket, EncodeError, PacketType, QoS, MAX_REMAINING_LENGTH};

/// Encode a remaining-length varint (2.2.3): little-endian 7-bit groups,
/// continuation bit 0x80, at most four bytes.
pub fn encode_remaining_length(n: u32) -> Result<Vec<u8>, EncodeError> {
    if n > MAX_REMAINING_LENGTH {
        return Err(EncodeError::TooLarge(n as usize));
    }
    let mut out = Vec::with_capacity(4);
    let mut value = n;
    loop {
        let mut byte = (value % 128) as u8;
        value /= 128;
        if value > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if value == 0 {
            return Ok(out);
        }
    }
}

fn write_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn write_string(out: &mut Vec<u8>, s: &str) -> Result<(), EncodeError> {
    if s.len() > u16::MAX as usize {
        return Err(EncodeError::StringTooLong);
    }
    write_u16(out, s.len() as u16);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn nonzero(id: u16) -> Result<u16, EncodeError> {
    if id == 0 {
        return Err(EncodeError::ZeroPacketId);
    }
    Ok(id)
}

/// Encode a packet to its wire bytes.
pub fn encode_packet(packet: &ControlPacket) -> Result<Vec<u8>, EncodeError> {
    let mut flags: u8 = match packet.packet_type() {
        PacketType::Subscribe | PacketType::Unsubscribe => 0b0010,
        _ => 0b0000,
    };
    let mut body = Vec::new();
    match packet {
        ControlPacket::Connect(c) => {
            write_string(&mut body, "MQTT")?;
            body.push(4);
            body.push(if c.clean_session { 0b0000_0010 } else { 0 });
            write_u16(&mut body, c.keep_alive_s);
            write_string(&mut body, &c.client_id)?;
        }
        ControlPacket::ConnAck(c) => {
            body.push(u8::from(c.session_present));
            body.push(c.return_code.code());
        }
        ControlPacket::Publish(p) => {
            validate_topic_name(&p.topic)?;
            match (p.qos, p.packet_id) {
                (QoS::AtLeastOnce, None) => return Err(EncodeError::MissingPacketId),
                (QoS::AtMostOnce, Some(_)) => return Err(EncodeError::UnexpectedPacketId),
                _ => {}
            }
            if p.dup && p.qos == QoS::AtMostOnce {
                return Err(EncodeError::DupWithoutQoS);
            }
            flags = (u8::from(p.dup) << 3) | (p.qos.code() << 1) | u8::from(p.retain);
            write_string(&mut body, &p.topic)?;
            if let Some(id) = p.packet_id {
                write_u16(&mut body, nonzero(id)?);
            }
            body.extend_from_slice(&p.payload);
        }
        ControlPacket::PubAck { packet_id } => {
            write_u16(&mut body, nonzero(*packet_id)?);
        }
        ControlPacket::Subscribe(s) => {
            write_u16(&mut body, nonzero(s.packet_id)?);
            if s.filters.is_empty() {
                return Err(EncodeError::EmptyEntries);
            }
            for (filter, qos) in &s.filters {
                validate_topic_filter(filter)?;
                write_string(&mut body, filter)?;
                body.push(qos.code());
            }
        }
        ControlPacket::SubAck(s) => {
            write_u16(&mut body, nonzero(s.packet_id)?);
            if s.returns.is_empty() {
                return Err(EncodeError::EmptyEntries);
            }
            for ret in &s.returns {
                body.push(ret.code());
            }
        }
        ControlPacket::Unsubscribe(u) => {
            write_u16(&mut body, nonzero(u.packet_id)?);
            if u.filters.is_empty() {
                return Err(EncodeError::EmptyEntries);
            }
            for filter in &u.filters {
                validate_topic_filter(filter)?;
                write_string(&mut body, filter)?;
            }
        }
        ControlPacket::UnsubAck { packet_id } => {
            write_u16(&mut body, nonzero(*packet_id)?);
        }
        ControlPacket::PingReq | ControlPacket::PingResp | ControlPacket::Disconnect => {}
    }

    if body.len() > MAX_REMAINING_LENGTH as usize {
        return Err(EncodeError::TooLarge(body.len()));
    }
    let varint = encode_remaining_length(body.len() as u32)?;
    let mut out = Vec::with_capacity(1 + varint.len() + body.len());
    out.push(((packet.packet_type() as u8) << 4) | flags);
    out.extend_from_slice(&varint);
    out.extend_from_slice(&body);
    Ok(out)
}
