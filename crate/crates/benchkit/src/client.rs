//! Blocking MQTT 3.1.1 client sessions for load generation and measurement.
//!
//! One [`Session`] wraps one TCP connection. Calls are synchronous: QoS 1
//! publishes block until the PUBACK arrives (retransmitting with DUP on
//! timeout), subscriptions block until the SUBACK. Inbound QoS 1 publishes
//! are acknowledged automatically and queued for [`Session::poll_publish`].
//!
//! Keep-alive is handled inside the wait loops: whenever half the keep-alive
//! interval passes without an outbound packet, a PINGREQ is sent, so long
//! subscriber polls do not let the broker drop the session.

use std::collections::{BTreeSet, VecDeque};
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::clock;
use crate::codec::{
    decode_packet, encode_packet, Connect, ConnectReturnCode, ControlPacket, DecodeOutcome,
    EncodeError, Publish, QoS, SubAckReturn, Subscribe,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed by peer")]
    Closed,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("broker refused connection: {0:?}")]
    Refused(ConnectReturnCode),
    #[error("no ack for packet {packet_id} after {retransmits} retransmissions")]
    AckTimeout { packet_id: u16, retransmits: u32 },
    #[error("subscription rejected by broker")]
    SubscribeRejected,
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub client_id: String,
    pub keep_alive_s: u16,
    pub connect_timeout: Duration,
    /// Patience per delivery attempt before a DUP retransmission.
    pub ack_timeout: Duration,
    pub max_retransmits: u32,
}

impl ClientConfig {
    pub fn new(client_id: impl Into<String>) -> Self {
        Self {
            client_id: client_id.into(),
            keep_alive_s: 60,
            connect_timeout: Duration::from_secs(5),
            ack_timeout: Duration::from_secs(5),
            max_retransmits: 3,
        }
    }
}

/// A PUBLISH received from the broker.
#[derive(Debug, Clone)]
pub struct InboundPublish {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub dup: bool,
    /// Process-monotonic receive stamp, comparable with payload send stamps.
    pub received_ns: u64,
}

pub struct Session {
    stream: TcpStream,
    buf: Vec<u8>,
    queued: VecDeque<InboundPublish>,
    config: ClientConfig,
    next_packet_id: u16,
    inflight: BTreeSet<u16>,
    pings_sent: u64,
    last_write: Instant,
}

impl Session {
    /// Connect, perform the CONNECT/CONNACK handshake, and return a live
    /// session with a clean state [MQTT-3.1.2-6].
    pub fn connect(addr: impl ToSocketAddrs, config: ClientConfig) -> Result<Self, ClientError> {
        let mut last_err: io::Error =
            io::Error::new(io::ErrorKind::AddrNotAvailable, "no addresses resolved");
        let mut stream = None;
        for candidate in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&candidate, config.connect_timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last_err = e,
            }
        }
        let stream = stream.ok_or(ClientError::Io(last_err))?;
        stream.set_nodelay(true)?;
        let mut session = Self {
            stream,
            buf: Vec::new(),
            queued: VecDeque::new(),
            next_packet_id: 1,
            inflight: BTreeSet::new(),
            pings_sent: 0,
            last_write: Instant::now(),
            config,
        };
        session.send(&ControlPacket::Connect(Connect {
            client_id: session.config.client_id.clone(),
            keep_alive_s: session.config.keep_alive_s,
            clean_session: true,
        }))?;
        let deadline = Instant::now() + session.config.connect_timeout;
        loop {
            match session.next_packet(deadline)? {
                Some(ControlPacket::ConnAck(ack)) => {
                    if ack.return_code != ConnectReturnCode::Accepted {
                        return Err(ClientError::Refused(ack.return_code));
                    }
                    return Ok(session);
                }
                Some(other) => {
                    return Err(ClientError::Protocol(format!(
                        "expected CONNACK, got {:?}",
                        other.packet_type()
                    )))
                }
                None => {
                    return Err(ClientError::AckTimeout { packet_id: 0, retransmits: 0 });
                }
            }
        }
    }

    /// Subscribe and return the per-filter grant results.
    pub fn subscribe(
        &mut self,
        filters: &[(&str, QoS)],
    ) -> Result<Vec<SubAckReturn>, ClientError> {
        let packet_id = self.alloc_packet_id();
        self.send(&ControlPacket::Subscribe(Subscribe {
            packet_id,
            filters: filters.iter().map(|(f, q)| ((*f).to_owned(), *q)).collect(),
        }))?;
        let deadline = Instant::now() + self.config.ack_timeout;
        loop {
            match self.next_packet(deadline)? {
                Some(ControlPacket::SubAck(ack)) if ack.packet_id == packet_id => {
                    self.inflight.remove(&packet_id);
                    if ack.returns.len() != filters.len() {
                        return Err(ClientError::Protocol(format!(
                            "SUBACK carries {} results for {} filters",
                            ack.returns.len(),
                            filters.len()
                        )));
                    }
                    return Ok(ack.returns);
                }
                Some(other) => self.handle_unrelated(other)?,
                None => {
                    self.inflight.remove(&packet_id);
                    return Err(ClientError::AckTimeout { packet_id, retransmits: 0 });
                }
            }
        }
    }

    /// Subscribe to a single filter, requiring an at-least-once grant.
    pub fn subscribe_qos1(&mut self, filter: &str) -> Result<(), ClientError> {
        match self.subscribe(&[(filter, QoS::AtLeastOnce)])?.as_slice() {
            [SubAckReturn::Granted(QoS::AtLeastOnce)] => Ok(()),
            _ => Err(ClientError::SubscribeRejected),
        }
    }

    pub fn publish_qos0(&mut self, topic: &str, payload: Vec<u8>) -> Result<(), ClientError> {
        self.send(&ControlPacket::Publish(Publish {
            dup: false,
            qos: QoS::AtMostOnce,
            retain: false,
            topic: topic.to_owned(),
            packet_id: None,
            payload,
        }))
    }

    /// Publish at QoS 1 and block until the PUBACK. On ack timeout the packet
    /// is retransmitted with the DUP flag, up to `max_retransmits` times.
    /// Returns the time from first send to acknowledgment.
    pub fn publish_qos1(
        &mut self,
        topic: &str,
        payload: Vec<u8>,
    ) -> Result<Duration, ClientError> {
        let packet_id = self.alloc_packet_id();
        self.inflight.insert(packet_id);
        let mut bytes = encode_packet(&ControlPacket::Publish(Publish {
            dup: false,
            qos: QoS::AtLeastOnce,
            retain: false,
            topic: topic.to_owned(),
            packet_id: Some(packet_id),
            payload,
        }))?;
        let started = Instant::now();
        let mut retransmits = 0u32;
        let result = loop {
            if let Err(e) = self.send_bytes(&bytes) {
                break Err(ClientError::Io(e));
            }
            let attempt_deadline = Instant::now() + self.config.ack_timeout;
            let acked = loop {
                match self.next_packet(attempt_deadline) {
                    Ok(Some(ControlPacket::PubAck { packet_id: acked } )) if acked == packet_id => {
                        break Ok(true)
                    }
                    Ok(Some(other)) => {
                        if let Err(e) = self.handle_unrelated(other) {
                            break Err(e);
                        }
                    }
                    Ok(None) => break Ok(false),
                    Err(e) => break Err(e),
                }
            };
            match acked {
                Ok(true) => break Ok(started.elapsed()),
                Ok(false) => {
                    if retransmits >= self.config.max_retransmits {
                        break Err(ClientError::AckTimeout { packet_id, retransmits });
                    }
                    retransmits += 1;
                    bytes[0] |= 0x08; // DUP [MQTT-3.3.1-1]
                }
                Err(e) => break Err(e),
            }
        };
        self.inflight.remove(&packet_id);
        result
    }

    /// Wait up to `wait` for the next inbound PUBLISH. `Ok(None)` on timeout.
    pub fn poll_publish(&mut self, wait: Duration) -> Result<Option<InboundPublish>, ClientError> {
        if let Some(p) = self.queued.pop_front() {
            return Ok(Some(p));
        }
        let deadline = Instant::now() + wait;
        loop {
            match self.next_packet(deadline)? {
                Some(packet) => {
                    self.handle_unrelated(packet)?;
                    if let Some(p) = self.queued.pop_front() {
                        return Ok(Some(p));
                    }
                }
                None => return Ok(None),
            }
        }
    }

    /// Send DISCONNECT and close the socket.
    pub fn disconnect(mut self) -> Result<(), ClientError> {
        self.send(&ControlPacket::Disconnect)?;
        let _ = self.stream.shutdown(Shutdown::Both);
        Ok(())
    }

    /// PINGREQs sent by keep-alive so far.
    pub fn pings_sent(&self) -> u64 {
        self.pings_sent
    }

    fn alloc_packet_id(&mut self) -> u16 {
        loop {
            let id = self.next_packet_id;
            self.next_packet_id = if id == u16::MAX { 1 } else { id + 1 };
            if !self.inflight.contains(&id) {
                return id;
            }
        }
    }

    fn send(&mut self, packet: &ControlPacket) -> Result<(), ClientError> {
        let bytes = encode_packet(packet)?;
        self.send_bytes(&bytes)?;
        Ok(())
    }

    fn send_bytes(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stream.write_all(bytes)?;
        self.last_write = Instant::now();
        Ok(())
    }

    /// Packets this call was not waiting for: queue publishes (acking QoS 1),
    /// swallow ping responses and stale acks.
    fn handle_unrelated(&mut self, packet: ControlPacket) -> Result<(), ClientError> {
        match packet {
            ControlPacket::Publish(p) => {
                let received_ns = clock::now_ns();
                if p.qos == QoS::AtLeastOnce {
                    self.send(&ControlPacket::PubAck {
                        packet_id: p.packet_id.expect("qos 1 carries a packet id"),
                    })?;
                }
                self.queued.push_back(InboundPublish {
                    topic: p.topic,
                    payload: p.payload,
                    qos: p.qos,
                    dup: p.dup,
                    received_ns,
                });
                Ok(())
            }
            ControlPacket::PingResp => Ok(()),
            // an ack that arrives after its publish timed out
            ControlPacket::PubAck { .. } => Ok(()),
            other => Err(ClientError::Protocol(format!(
                "unexpected {:?} from broker",
                other.packet_type()
            ))),
        }
    }

    /// Decode the next packet, reading from the socket as needed, until
    /// `deadline`. Sends keep-alive pings while waiting.
    fn next_packet(&mut self, deadline: Instant) -> Result<Option<ControlPacket>, ClientError> {
        let mut scratch = [0u8; 8192];
        loop {
            match decode_packet(&self.buf) {
                DecodeOutcome::Decoded { packet, consumed } => {
                    self.buf.drain(..consumed);
                    return Ok(Some(packet));
                }
                DecodeOutcome::Malformed { reason } => {
                    return Err(ClientError::Protocol(reason.to_string()))
                }
                DecodeOutcome::NeedMoreBytes { .. } => {
                    self.maybe_keepalive()?;
                    let now = Instant::now();
                    if now >= deadline {
                        return Ok(None);
                    }
                    // short ticks so keep-alive fires during long waits
                    let tick = (deadline - now).min(Duration::from_millis(250));
                    self.stream.set_read_timeout(Some(tick.max(Duration::from_millis(1))))?;
                    match self.stream.read(&mut scratch) {
                        Ok(0) => return Err(ClientError::Closed),
                        Ok(n) => self.buf.extend_from_slice(&scratch[..n]),
                        Err(e)
                            if e.kind() == io::ErrorKind::WouldBlock
                                || e.kind() == io::ErrorKind::TimedOut => {}
                        Err(e) => return Err(ClientError::Io(e)),
                    }
                }
            }
        }
    }

    fn maybe_keepalive(&mut self) -> Result<(), ClientError> {
        if self.config.keep_alive_s == 0 {
            return Ok(());
        }
        let half = Duration::from_millis(u64::from(self.config.keep_alive_s) * 500);
        if self.last_write.elapsed() >= half {
            self.send(&ControlPacket::PingReq)?;
            self.pings_sent += 1;
        }
        Ok(())
    }
}
