//! Minimal in-process MQTT 3.1.1 broker.
//!
//! Supports CONNECT, PUBLISH at QoS 0 and 1 with wildcard fan-out, SUBSCRIBE,
//! UNSUBSCRIBE, PINGREQ and DISCONNECT. No retained messages, no session
//! persistence, no keep-alive enforcement, no QoS 2. Outbound QoS 1
//! deliveries are fire-and-forget: the stub allocates fresh packet ids and
//! consumes the subscriber's PUBACKs without tracking them.
//!
//! Retransmitted inbound PUBLISHes (DUP set) fan out again; deduplication is
//! deliberately left to the receiving side, which is exactly the situation a
//! QoS 1 measurement pipeline has to cope with.
//!
//! A [`FaultPlan`] turns the stub into a fault-injection fixture: it can
//! swallow PUBACKs to force client retransmission, refuse connections, or
//! override the granted QoS on every subscription.

mod matching;

pub use matching::{match_filter, SessionId, SubscriptionTable};

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU16, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::codec::{
    decode_packet, encode_packet, ConnAck, ConnectReturnCode, ControlPacket, DecodeOutcome,
    Publish, QoS, SubAck, SubAckReturn,
};
use crate::rt;

/// Deliberate misbehaviors for exercising client recovery paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultPlan {
    /// Swallow the first n PUBACKs the stub would otherwise send.
    pub drop_first_n_pubacks: u32,
    /// CONNACK return code for every connection; nonzero refuses and closes.
    pub connack_return_code: u8,
    /// Answer every SUBSCRIBE entry with this code instead of the requested
    /// QoS. 0x80 refuses the subscription.
    pub grant_qos_override: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct StubConfig {
    pub listen: SocketAddr,
    pub faults: FaultPlan,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:0".parse().unwrap(),
            faults: FaultPlan::default(),
        }
    }
}

/// Running stub. Shuts down on [`StubHandle::shutdown`] or drop.
pub struct StubHandle {
    local_addr: SocketAddr,
    inner: Arc<Inner>,
    accept_thread: Option<JoinHandle<()>>,
}

struct Inner {
    faults: FaultPlan,
    shutdown: AtomicBool,
    subs: Mutex<SubscriptionTable>,
    sessions: Mutex<HashMap<SessionId, SessionEntry>>,
    next_session: AtomicU64,
    dropped_pubacks: AtomicU32,
    active: AtomicUsize,
}

struct SessionEntry {
    tx: mpsc::Sender<Vec<u8>>,
    stream: TcpStream,
    next_pid: AtomicU16,
}

/// Start a stub broker. `config.listen` may use port 0.
pub fn spawn(config: StubConfig) -> io::Result<StubHandle> {
    if let Some(code) = config.faults.grant_qos_override {
        if code != 0 && code != 1 && code != 0x80 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("grant_qos_override must be 0, 1 or 0x80, got {code:#x}"),
            ));
        }
    }
    let listener = TcpListener::bind(config.listen)?;
    let local_addr = listener.local_addr()?;
    let inner = Arc::new(Inner {
        faults: config.faults,
        shutdown: AtomicBool::new(false),
        subs: Mutex::new(SubscriptionTable::new()),
        sessions: Mutex::new(HashMap::new()),
        next_session: AtomicU64::new(1),
        dropped_pubacks: AtomicU32::new(0),
        active: AtomicUsize::new(0),
    });
    let accept_inner = Arc::clone(&inner);
    let accept_thread = rt::spawn("stub-accept", move || accept_loop(listener, accept_inner))?;
    Ok(StubHandle {
        local_addr,
        inner,
        accept_thread: Some(accept_thread),
    })
}

impl StubHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.inner.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the accept loop, then kill every live session socket
        let _ = TcpStream::connect(self.local_addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        for entry in self.inner.sessions.lock().unwrap().values() {
            let _ = entry.stream.shutdown(Shutdown::Both);
        }
        rt::await_zero(&self.inner.active, Duration::from_secs(2));
    }
}

impl Drop for StubHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, inner: Arc<Inner>) {
    for conn in listener.incoming() {
        if inner.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = conn else { continue };
        let _ = stream.set_nodelay(true);
        let id = inner.next_session.fetch_add(1, Ordering::SeqCst);
        let session_inner = Arc::clone(&inner);
        inner.active.fetch_add(1, Ordering::SeqCst);
        let spawned = rt::spawn(&format!("stub-session-{id}"), move || {
            session_main(stream, id, &session_inner);
            session_inner.active.fetch_sub(1, Ordering::SeqCst);
        });
        if spawned.is_err() {
            inner.active.fetch_sub(1, Ordering::SeqCst);
        }
    }
}

fn session_main(stream: TcpStream, id: SessionId, inner: &Arc<Inner>) {
    let (tx, rx) = mpsc::channel::<Vec<u8>>();
    let writer = match stream.try_clone().and_then(|out| {
        rt::spawn(&format!("stub-writer-{id}"), move || writer_loop(out, rx))
    }) {
        Ok(w) => w,
        Err(_) => return,
    };
    if let Ok(registered) = stream.try_clone() {
        inner.sessions.lock().unwrap().insert(
            id,
            SessionEntry {
                tx: tx.clone(),
                stream: registered,
                next_pid: AtomicU16::new(1),
            },
        );
        read_loop(stream, id, inner, &tx);
    }
    inner.sessions.lock().unwrap().remove(&id);
    inner.subs.lock().unwrap().remove_session(id);
    drop(tx);
    let _ = writer.join();
}

fn writer_loop(mut out: TcpStream, rx: mpsc::Receiver<Vec<u8>>) {
    for bytes in rx {
        if out.write_all(&bytes).is_err() {
            let _ = out.shutdown(Shutdown::Both);
            return;
        }
    }
    let _ = out.shutdown(Shutdown::Write);
}

fn read_loop(mut stream: TcpStream, id: SessionId, inner: &Arc<Inner>, tx: &mpsc::Sender<Vec<u8>>) {
    let mut buf: Vec<u8> = Vec::new();
    let mut scratch = vec![0u8; 8192];
    let mut connected = false;
    loop {
        match decode_packet(&buf) {
            DecodeOutcome::Decoded { packet, consumed } => {
                buf.drain(..consumed);
                if !handle_packet(packet, id, inner, tx, &mut connected) {
                    break;
                }
            }
            DecodeOutcome::NeedMoreBytes { .. } => match stream.read(&mut scratch) {
                Ok(0) | Err(_) => break,
                Ok(n) => buf.extend_from_slice(&scratch[..n]),
            },
            // a malformed stream cannot be re-synchronized; drop the session
            DecodeOutcome::Malformed { .. } => break,
        }
    }
}

/// Returns false when the session must close.
fn handle_packet(
    packet: ControlPacket,
    id: SessionId,
    inner: &Arc<Inner>,
    tx: &mpsc::Sender<Vec<u8>>,
    connected: &mut bool,
) -> bool {
    if !*connected {
        // CONNECT must be first [MQTT-3.1.0-1]
        let ControlPacket::Connect(_) = packet else {
            return false;
        };
        let code = inner.faults.connack_return_code;
        let ack = ControlPacket::ConnAck(ConnAck {
            session_present: false,
            return_code: ConnectReturnCode::try_from(code)
                .unwrap_or(ConnectReturnCode::NotAuthorized),
        });
        send(tx, &ack);
        *connected = true;
        return code == 0;
    }
    match packet {
        // a second CONNECT is a protocol violation [MQTT-3.1.0-2]
        ControlPacket::Connect(_) => false,
        ControlPacket::Publish(p) => {
            fan_out(inner, &p);
            if p.qos == QoS::AtLeastOnce {
                let drop_budget = inner.faults.drop_first_n_pubacks;
                if drop_budget > 0 && inner.dropped_pubacks.fetch_add(1, Ordering::SeqCst) < drop_budget
                {
                    return true;
                }
                send(
                    tx,
                    &ControlPacket::PubAck {
                        packet_id: p.packet_id.expect("qos 1 publish carries a packet id"),
                    },
                );
            }
            true
        }
        ControlPacket::Subscribe(s) => {
            let mut returns = Vec::with_capacity(s.filters.len());
            for (filter, requested) in &s.filters {
                let granted = match inner.faults.grant_qos_override {
                    Some(0x80) => None,
                    Some(code) => Some(QoS::try_from(code).expect("validated at spawn")),
                    None => Some(*requested),
                };
                match granted {
                    Some(qos) => {
                        inner.subs.lock().unwrap().subscribe(id, filter, qos);
                        returns.push(SubAckReturn::Granted(qos));
                    }
                    None => returns.push(SubAckReturn::Failure),
                }
            }
            send(
                tx,
                &ControlPacket::SubAck(SubAck {
                    packet_id: s.packet_id,
                    returns,
                }),
            );
            true
        }
        ControlPacket::Unsubscribe(u) => {
            let mut subs = inner.subs.lock().unwrap();
            for filter in &u.filters {
                subs.unsubscribe(id, filter);
            }
            drop(subs);
            send(tx, &ControlPacket::UnsubAck { packet_id: u.packet_id });
            true
        }
        // subscriber acking a QoS 1 delivery; we do not track outbound state
        ControlPacket::PubAck { .. } => true,
        ControlPacket::PingReq => {
            send(tx, &ControlPacket::PingResp);
            true
        }
        ControlPacket::Disconnect => false,
        // server-side packets arriving from a client
        ControlPacket::ConnAck(_)
        | ControlPacket::SubAck(_)
        | ControlPacket::UnsubAck { .. }
        | ControlPacket::PingResp => false,
    }
}

fn fan_out(inner: &Arc<Inner>, publish: &Publish) {
    let targets = inner.subs.lock().unwrap().matches(&publish.topic);
    if targets.is_empty() {
        return;
    }
    let sessions = inner.sessions.lock().unwrap();
    for (session, granted) in targets {
        let Some(entry) = sessions.get(&session) else { continue };
        let qos = publish.qos.min(granted);
        let packet_id = (qos == QoS::AtLeastOnce).then(|| next_pid(&entry.next_pid));
        let out = ControlPacket::Publish(Publish {
            dup: false,
            qos,
            retain: false,
            topic: publish.topic.clone(),
            packet_id,
            payload: publish.payload.clone(),
        });
        if let Ok(bytes) = encode_packet(&out) {
            let _ = entry.tx.send(bytes);
        }
    }
}

/// Fresh nonzero packet id per outbound QoS 1 delivery; wraps 65535 -> 1.
fn next_pid(counter: &AtomicU16) -> u16 {
    counter
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| {
            Some(if v == u16::MAX { 1 } else { v + 1 })
        })
        .unwrap()
}

fn send(tx: &mpsc::Sender<Vec<u8>>, packet: &ControlPacket) {
    if let Ok(bytes) = encode_packet(packet) {
        let _ = tx.send(bytes);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Connect, Subscribe};
    use std::time::Duration;

    struct RawClient {
        stream: TcpStream,
        buf: Vec<u8>,
    }

    impl RawClient {
        fn connect(addr: SocketAddr) -> Self {
            let stream = TcpStream::connect(addr).unwrap();
            stream.set_nodelay(true).unwrap();
            stream
                .set_read_timeout(Some(Duration::from_secs(5)))
                .unwrap();
            Self { stream, buf: Vec::new() }
        }

        fn send(&mut self, packet: &ControlPacket) {
            let bytes = encode_packet(packet).unwrap();
            self.stream.write_all(&bytes).unwrap();
        }

        fn recv(&mut self) -> Option<ControlPacket> {
            let mut scratch = [0u8; 4096];
            loop {
                match decode_packet(&self.buf) {
                    DecodeOutcome::Decoded { packet, consumed } => {
                        self.buf.drain(..consumed);
                        return Some(packet);
                    }
                    DecodeOutcome::Malformed { reason } => panic!("malformed: {reason}"),
                    DecodeOutcome::NeedMoreBytes { .. } => match self.stream.read(&mut scratch) {
                        Ok(0) => return None,
                        Ok(n) => self.buf.extend_from_slice(&scratch[..n]),
                        Err(e) => panic!("read: {e}"),
                    },
                }
            }
        }

        fn handshake(&mut self, client_id: &str) {
            self.send(&ControlPacket::Connect(Connect {
                client_id: client_id.into(),
                keep_alive_s: 60,
                clean_session: true,
            }));
            match self.recv() {
                Some(ControlPacket::ConnAck(ack)) => {
                    assert_eq!(ack.return_code, ConnectReturnCode::Accepted)
                }
                other => panic!("expected CONNACK, got {other:?}"),
            }
        }

        fn subscribe(&mut self, filter: &str, qos: QoS) {
            self.send(&ControlPacket::Subscribe(Subscribe {
                packet_id: 7,
                filters: vec![(filter.into(), qos)],
            }));
            match self.recv() {
                Some(ControlPacket::SubAck(ack)) => {
                    assert_eq!(ack.returns, vec![SubAckReturn::Granted(qos)])
                }
                other => panic!("expected SUBACK, got {other:?}"),
            }
        }
    }

    fn start(faults: FaultPlan) -> StubHandle {
        spawn(StubConfig { faults, ..StubConfig::default() }).unwrap()
    }

    #[test]
    fn fan_out_respects_wildcards_and_parent_level() {
        let stub = start(FaultPlan::default());
        let mut sub = RawClient::connect(stub.local_addr());
        sub.handshake("sub");
        sub.subscribe("bench/#", QoS::AtMostOnce);

        let mut publisher = RawClient::connect(stub.local_addr());
        publisher.handshake("pub");
        for topic in ["bench/x/y", "bench"] {
            publisher.send(&ControlPacket::Publish(Publish {
                dup: false,
                qos: QoS::AtMostOnce,
                retain: false,
                topic: topic.into(),
                packet_id: None,
                payload: b"m".to_vec(),
            }));
        }
        for expected in ["bench/x/y", "bench"] {
            match sub.recv() {
                Some(ControlPacket::Publish(p)) => {
                    assert_eq!(p.topic, expected);
                    assert_eq!(p.qos, QoS::AtMostOnce);
                    assert_eq!(p.packet_id, None);
                }
                other => panic!("expected PUBLISH, got {other:?}"),
            }
        }
    }

    #[test]
    fn qos1_publish_gets_puback_and_fresh_delivery_pid() {
        let stub = start(FaultPlan::default());
        let mut sub = RawClient::connect(stub.local_addr());
        sub.handshake("sub");
        sub.subscribe("t/#", QoS::AtLeastOnce);

        let mut publisher = RawClient::connect(stub.local_addr());
        publisher.handshake("pub");
        publisher.send(&ControlPacket::Publish(Publish {
            dup: false,
            qos: QoS::AtLeastOnce,
            retain: false,
            topic: "t/1".into(),
            packet_id: Some(900),
            payload: b"hello".to_vec(),
        }));
        match publisher.recv() {
            Some(ControlPacket::PubAck { packet_id }) => assert_eq!(packet_id, 900),
            other => panic!("expected PUBACK, got {other:?}"),
        }
        match sub.recv() {
            Some(ControlPacket::Publish(p)) => {
                assert_eq!(p.qos, QoS::AtLeastOnce);
                // delivery uses the stub's own id space, not the publisher's
                assert_eq!(p.packet_id, Some(1));
                assert_eq!(p.payload, b"hello");
            }
            other => panic!("expected PUBLISH, got {other:?}"),
        }
    }

    #[test]
    fn grant_is_capped_by_subscription_qos() {
        let stub = start(FaultPlan::default());
        let mut sub = RawClient::connect(stub.local_addr());
        sub.handshake("sub");
        sub.subscribe("t", QoS::AtMostOnce);

        let mut publisher = RawClient::connect(stub.local_addr());
        publisher.handshake("pub");
        publisher.send(&ControlPacket::Publish(Publish {
            dup: false,
            qos: QoS::AtLeastOnce,
            retain: false,
            topic: "t".into(),
            packet_id: Some(3),
            payload: vec![],
        }));
        match sub.recv() {
            Some(ControlPacket::Publish(p)) => {
                assert_eq!(p.qos, QoS::AtMostOnce);
                assert_eq!(p.packet_id, None);
            }
            other => panic!("expected downgraded PUBLISH, got {other:?}"),
        }
    }

    #[test]
    fn connack_refusal_closes_the_session() {
        let stub = start(FaultPlan { connack_return_code: 5, ..FaultPlan::default() });
        let mut client = RawClient::connect(stub.local_addr());
        client.send(&ControlPacket::Connect(Connect {
            client_id: "c".into(),
            keep_alive_s: 60,
            clean_session: true,
        }));
        match client.recv() {
            Some(ControlPacket::ConnAck(ack)) => {
                assert_eq!(ack.return_code, ConnectReturnCode::NotAuthorized)
            }
            other => panic!("expected refusing CONNACK, got {other:?}"),
        }
        assert!(client.recv().is_none(), "stub should close after refusal");
    }

    #[test]
    fn drops_the_first_n_pubacks() {
        let stub = start(FaultPlan { drop_first_n_pubacks: 1, ..FaultPlan::default() });
        let mut publisher = RawClient::connect(stub.local_addr());
        publisher.handshake("pub");
        let publish = |pid: u16| {
            ControlPacket::Publish(Publish {
                dup: false,
                qos: QoS::AtLeastOnce,
                retain: false,
                topic: "t".into(),
                packet_id: Some(pid),
                payload: vec![],
            })
        };
        publisher.send(&publish(1));
        publisher.send(&publish(2));
        // first PUBACK swallowed; the next one acknowledges pid 2
        match publisher.recv() {
            Some(ControlPacket::PubAck { packet_id }) => assert_eq!(packet_id, 2),
            other => panic!("expected PUBACK for pid 2, got {other:?}"),
        }
    }

    #[test]
    fn subscription_override_rejects_with_0x80() {
        let stub = start(FaultPlan { grant_qos_override: Some(0x80), ..FaultPlan::default() });
        let mut sub = RawClient::connect(stub.local_addr());
        sub.handshake("sub");
        sub.send(&ControlPacket::Subscribe(Subscribe {
            packet_id: 11,
            filters: vec![("t".into(), QoS::AtLeastOnce)],
        }));
        match sub.recv() {
            Some(ControlPacket::SubAck(ack)) => {
                assert_eq!(ack.returns, vec![SubAckReturn::Failure])
            }
            other => panic!("expected SUBACK failure, got {other:?}"),
        }
    }

    #[test]
    fn malformed_first_packet_closes_without_reply() {
        let stub = start(FaultPlan::default());
        let mut stream = TcpStream::connect(stub.local_addr()).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        stream.write_all(&[0xF0, 0x00]).unwrap(); // reserved type 15
        let mut buf = [0u8; 16];
        assert_eq!(stream.read(&mut buf).unwrap(), 0);
    }

    #[test]
    fn unsubscribe_stops_fan_out() {
        let stub = start(FaultPlan::default());
        let mut sub = RawClient::connect(stub.local_addr());
        sub.handshake("sub");
        sub.subscribe("t", QoS::AtLeastOnce);
        sub.send(&ControlPacket::Unsubscribe(crate::codec::Unsubscribe {
            packet_id: 9,
            filters: vec!["t".into()],
        }));
        match sub.recv() {
            Some(ControlPacket::UnsubAck { packet_id }) => assert_eq!(packet_id, 9),
            other => panic!("expected UNSUBACK, got {other:?}"),
        }

        let mut publisher = RawClient::connect(stub.local_addr());
        publisher.handshake("pub");
        publisher.send(&ControlPacket::Publish(Publish {
            dup: false,
            qos: QoS::AtMostOnce,
            retain: false,
            topic: "t".into(),
            packet_id: None,
            payload: vec![],
        }));
        // prove silence by following with a ping on the subscriber side
        sub.send(&ControlPacket::PingReq);
        match sub.recv() {
            Some(ControlPacket::PingResp) => {}
            other => panic!("expected PINGRESP, got {other:?}"),
        }
    }

    #[test]
    fn invalid_grant_override_is_rejected_at_spawn() {
        match spawn(StubConfig {
            faults: FaultPlan { grant_qos_override: Some(2), ..FaultPlan::default() },
            ..StubConfig::default()
        }) {
            Err(err) => assert_eq!(err.kind(), io::ErrorKind::InvalidInput),
            Ok(_) => panic!("grant_qos_override 2 must be rejected"),
        }
    }
}
