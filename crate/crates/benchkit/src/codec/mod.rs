//! MQTT 3.1.1 wire codec: packet types, encoding, incremental decoding.
//!
//! Scope: the 3.1.1 subset the harness speaks. QoS 2 (and the PUBREC/PUBREL/
//! PUBCOMP exchange), will messages, credentials, and MQTT 5.0 frames are out
//! of scope and decode as malformed. The decoder is a pure function over a
//! byte slice so the client, the proxy, and the broker stub all share it.

mod decode;
mod encode;
pub mod topic;

pub use decode::{decode_packet, decode_remaining_length, frame_length, FrameStatus};
pub use encode::{encode_packet, encode_remaining_length};
pub use topic::{validate_topic_filter, validate_topic_name, TopicError};

/// Largest value a remaining-length varint can carry (four 7-bit groups).
pub const MAX_REMAINING_LENGTH: u32 = 268_435_455;

/// MQTT 3.1.1 control packet types. Types 5-7 (QoS 2 flow) are recognized on
/// the wire but unsupported, and types 0/15 are reserved; all five decode as
/// malformed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketType {
    Connect = 1,
    ConnAck = 2,
    Publish = 3,
    PubAck = 4,
    Subscribe = 8,
    SubAck = 9,
    Unsubscribe = 10,
    UnsubAck = 11,
    PingReq = 12,
    PingResp = 13,
    Disconnect = 14,
}

impl TryFrom<u8> for PacketType {
    type Error = DecodeError;

    fn try_from(value: u8) -> Result<Self, DecodeError> {
        match value {
            1 => Ok(PacketType::Connect),
            2 => Ok(PacketType::ConnAck),
            3 => Ok(PacketType::Publish),
            4 => Ok(PacketType::PubAck),
            8 => Ok(PacketType::Subscribe),
            9 => Ok(PacketType::SubAck),
            10 => Ok(PacketType::Unsubscribe),
            11 => Ok(PacketType::UnsubAck),
            12 => Ok(PacketType::PingReq),
            13 => Ok(PacketType::PingResp),
            14 => Ok(PacketType::Disconnect),
            other => Err(DecodeError::UnsupportedType(other)),
        }
    }
}

/// Delivery quality of service. QoS 2 is out of scope for the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QoS {
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

impl QoS {
    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for QoS {
    type Error = DecodeError;

    fn try_from(value: u8) -> Result<Self, DecodeError> {
        match value {
            0 => Ok(QoS::AtMostOnce),
            1 => Ok(QoS::AtLeastOnce),
            2 => Err(DecodeError::UnsupportedQoS),
            other => Err(DecodeError::BadQoS(other)),
        }
    }
}

/// CONNACK return codes (3.1.1 table 3.1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectReturnCode {
    Accepted = 0,
    UnacceptableProtocolVersion = 1,
    IdentifierRejected = 2,
    ServerUnavailable = 3,
    BadCredentials = 4,
    NotAuthorized = 5,
}

impl ConnectReturnCode {
    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for ConnectReturnCode {
    type Error = DecodeError;

    fn try_from(value: u8) -> Result<Self, DecodeError> {
        match value {
            0 => Ok(ConnectReturnCode::Accepted),
            1 => Ok(ConnectReturnCode::UnacceptableProtocolVersion),
            2 => Ok(ConnectReturnCode::IdentifierRejected),
            3 => Ok(ConnectReturnCode::ServerUnavailable),
            4 => Ok(ConnectReturnCode::BadCredentials),
            5 => Ok(ConnectReturnCode::NotAuthorized),
            other => Err(DecodeError::BadReturnCode(other)),
        }
    }
}

/// One SUBACK payload entry: a granted QoS or the failure code 0x80.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubAckReturn {
    Granted(QoS),
    Failure,
}

impl SubAckReturn {
    pub fn code(self) -> u8 {
        match self {
            SubAckReturn::Granted(qos) => qos.code(),
            SubAckReturn::Failure => 0x80,
        }
    }
}

impl TryFrom<u8> for SubAckReturn {
    type Error = DecodeError;

    fn try_from(value: u8) -> Result<Self, DecodeError> {
        match value {
            0 => Ok(SubAckReturn::Granted(QoS::AtMostOnce)),
            1 => Ok(SubAckReturn::Granted(QoS::AtLeastOnce)),
            2 => Err(DecodeError::UnsupportedQoS),
            0x80 => Ok(SubAckReturn::Failure),
            other => Err(DecodeError::BadSubAckCode(other)),
        }
    }
}

/// Parsed fixed header: type nibble, flag bits, declared remaining length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedHeader {
    pub packet_type: PacketType,
    pub dup: bool,
    /// Raw QoS bits (0..=2); packet-level decoding rejects 2.
    pub qos: u8,
    pub retain: bool,
    pub remaining_length: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub keep_alive_s: u16,
    pub clean_session: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnAck {
    pub session_present: bool,
    pub return_code: ConnectReturnCode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub dup: bool,
    pub qos: QoS,
    pub retain: bool,
    pub topic: String,
    /// Present exactly when `qos` is `AtLeastOnce`.
    pub packet_id: Option<u16>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscribe {
    pub packet_id: u16,
    pub filters: Vec<(String, QoS)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubAck {
    pub packet_id: u16,
    pub returns: Vec<SubAckReturn>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unsubscribe {
    pub packet_id: u16,
    pub filters: Vec<String>,
}

/// One complete MQTT 3.1.1 control packet, in the subset the harness uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlPacket {
    Connect(Connect),
    ConnAck(ConnAck),
    Publish(Publish),
    PubAck { packet_id: u16 },
    Subscribe(Subscribe),
    SubAck(SubAck),
    Unsubscribe(Unsubscribe),
    UnsubAck { packet_id: u16 },
    PingReq,
    PingResp,
    Disconnect,
}

impl ControlPacket {
    pub fn packet_type(&self) -> PacketType {
        match self {
            ControlPacket::Connect(_) => PacketType::Connect,
            ControlPacket::ConnAck(_) => PacketType::ConnAck,
            ControlPacket::Publish(_) => PacketType::Publish,
            ControlPacket::PubAck { .. } => PacketType::PubAck,
            ControlPacket::Subscribe(_) => PacketType::Subscribe,
            ControlPacket::SubAck(_) => PacketType::SubAck,
            ControlPacket::Unsubscribe(_) => PacketType::Unsubscribe,
            ControlPacket::UnsubAck { .. } => PacketType::UnsubAck,
            ControlPacket::PingReq => PacketType::PingReq,
            ControlPacket::PingResp => PacketType::PingResp,
            ControlPacket::Disconnect => PacketType::Disconnect,
        }
    }
}

/// Result of feeding bytes to the incremental decoder.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeOutcome {
    /// The buffer holds a prefix of a valid packet; at least
    /// `minimum_additional` more bytes are required to make progress.
    NeedMoreBytes { minimum_additional: usize },
    /// A complete packet was decoded from the first `consumed` bytes.
    /// Bytes past `consumed` are untouched.
    Decoded { packet: ControlPacket, consumed: usize },
    /// The buffer can never become a valid packet.
    Malformed { reason: DecodeError },
}

/// Why a byte sequence is not a valid packet.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("reserved or unsupported packet type {0}")]
    UnsupportedType(u8),
    #[error("invalid fixed header flags {flags:#06b} for {packet:?}")]
    BadFlags { packet: PacketType, flags: u8 },
    #[error("remaining length varint exceeds four bytes")]
    RemainingLengthTooLong,
    #[error("declared remaining length does not match the packet body")]
    LengthMismatch,
    #[error("unsupported protocol name or level (expected MQTT level 4)")]
    UnsupportedProtocol,
    #[error("connect flags request unsupported features (will/credentials)")]
    UnsupportedConnectFlags,
    #[error("reserved bits must be zero")]
    ReservedBits,
    #[error("qos 2 is unsupported")]
    UnsupportedQoS,
    #[error("invalid qos value {0}")]
    BadQoS(u8),
    #[error("packet id must be nonzero")]
    ZeroPacketId,
    #[error("dup flag requires qos 1")]
    DupWithoutQoS,
    #[error("string field is not valid utf-8")]
    InvalidUtf8,
    #[error("string field contains a nul character")]
    EmbeddedNul,
    #[error("bad connack return code {0}")]
    BadReturnCode(u8),
    #[error("bad suback return code {0:#04x}")]
    BadSubAckCode(u8),
    #[error("subscribe, unsubscribe, and suback need at least one entry")]
    EmptyEntries,
    #[error("invalid topic: {0}")]
    Topic(#[from] TopicError),
}

/// Why a packet cannot be encoded.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("remaining length {0} exceeds the protocol maximum")]
    TooLarge(usize),
    #[error("string field exceeds 65535 bytes")]
    StringTooLong,
    #[error("qos 1 publish requires a packet id")]
    MissingPacketId,
    #[error("qos 0 publish must not carry a packet id")]
    UnexpectedPacketId,
    #[error("packet id must be nonzero")]
    ZeroPacketId,
    #[error("dup flag requires qos 1")]
    DupWithoutQoS,
    #[error("subscribe, unsubscribe, and suback need at least one entry")]
    EmptyEntries,
    #[error("invalid topic: {0}")]
    Topic(#[from] TopicError),
}
