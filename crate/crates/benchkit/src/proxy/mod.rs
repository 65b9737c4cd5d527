//! Impairing TCP relay.
//!
//! The proxy accepts client connections and relays each to the configured
//! upstream, applying the scenario's latency, jitter and loss penalty to
//! every chunk independently per direction. Chunks are MQTT frames: the
//! relay delimits complete control packets with the codec's frame scanner
//! without parsing bodies, which makes chunk boundaries (and therefore all
//! delay and loss draws) a function of the packet flow rather than of TCP
//! read coalescing. On bytes that do not frame as MQTT, or on frames larger
//! than [`MAX_RELAY_FRAME`] bytes, the affected direction falls back to raw
//! chunking for the rest of the connection and keeps relaying faithfully.
//!
//! Writes preserve order per direction (FIFO release clamp), so impairment
//! only ever delays traffic, it never corrupts or reorders a TCP stream.

mod schedule;

pub use schedule::{
    draw_loss, replay_schedule, sample_delay_ms, ChunkDecision, ReleaseSchedule,
};

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{Receiver, SyncSender};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock;
use crate::rt;
use crate::scenario::{LossModel, Scenario};
use crate::seed::mix_u64;

/// Frames declaring more than this many bytes are relayed raw instead.
/// Covers the largest configurable payload plus topic and header overhead.
pub const MAX_RELAY_FRAME: usize = 8 * 1024 * 1024 + 16 * 1024;

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub listen: SocketAddr,
    pub upstream: SocketAddr,
    pub scenario: Scenario,
    pub loss: LossModel,
    pub seed: u64,
}

/// Counters for one relay direction.
#[derive(Debug, Default)]
struct DirStats {
    chunks: AtomicU64,
    bytes: AtomicU64,
    penalties: AtomicU64,
}

impl DirStats {
    fn snapshot(&self) -> DirSnapshot {
        DirSnapshot {
            chunks: self.chunks.load(Ordering::SeqCst),
            bytes: self.bytes.load(Ordering::SeqCst),
            penalties: self.penalties.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirSnapshot {
    pub chunks: u64,
    pub bytes: u64,
    pub penalties: u64,
}

/// Relay counters at a point in time. `up` is client-to-upstream traffic,
/// `down` is upstream-to-client.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxySnapshot {
    pub up: DirSnapshot,
    pub down: DirSnapshot,
}

pub struct ProxyHandle {
    local_addr: SocketAddr,
    inner: Arc<Inner>,
    accept_thread: Option<JoinHandle<()>>,
}

struct Inner {
    upstream: SocketAddr,
    scenario: Scenario,
    loss: LossModel,
    seed: u64,
    shutdown: AtomicBool,
    conn_seq: AtomicU64,
    up: Arc<DirStats>,
    down: Arc<DirStats>,
    socks: Mutex<Vec<TcpStream>>,
    active: AtomicUsize,
}

/// Start a proxy. `config.listen` may use port 0.
pub fn spawn(config: ProxyConfig) -> io::Result<ProxyHandle> {
    config
        .scenario
        .validate()
        .and_then(|()| config.loss.validate())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = TcpListener::bind(config.listen)?;
    let local_addr = listener.local_addr()?;
    let inner = Arc::new(Inner {
        upstream: config.upstream,
        scenario: config.scenario,
        loss: config.loss,
        seed: config.seed,
        shutdown: AtomicBool::new(false),
        conn_seq: AtomicU64::new(0),
        up: Arc::new(DirStats::default()),
        down: Arc::new(DirStats::default()),
        socks: Mutex::new(Vec::new()),
        active: AtomicUsize::new(0),
    });
    let accept_inner = Arc::clone(&inner);
    let accept_thread = rt::spawn("proxy-accept", move || accept_loop(listener, accept_inner))?;
    Ok(ProxyHandle { local_addr, inner, accept_thread: Some(accept_thread) })
}

impl ProxyHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats(&self) -> ProxySnapshot {
        ProxySnapshot {
            up: self.inner.up.snapshot(),
            down: self.inner.down.snapshot(),
        }
    }

    pub fn shutdown(mut self) -> ProxySnapshot {
        self.stop();
        ProxySnapshot {
            up: self.inner.up.snapshot(),
            down: self.inner.down.snapshot(),
        }
    }

    fn stop(&mut self) {
        if self.inner.shutdown.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.local_addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        for sock in self.inner.socks.lock().unwrap().iter() {
            let _ = sock.shutdown(Shutdown::Both);
        }
        rt::await_zero(&self.inner.active, Duration::from_secs(2));
    }
}

impl Drop for ProxyHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, inner: Arc<Inner>) {
    for conn in listener.incoming() {
        if inner.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let Ok(client) = conn else { continue };
        // refuse to hold a client when the upstream is unreachable
        let Ok(upstream) =
            TcpStream::connect_timeout(&inner.upstream, Duration::from_secs(5))
        else {
            continue;
        };
        let _ = client.set_nodelay(true);
        let _ = upstream.set_nodelay(true);
        let conn_index = inner.conn_seq.fetch_add(1, Ordering::SeqCst);
        if start_relay(&inner, conn_index, client, upstream).is_err() {
            continue;
        }
    }
}

fn start_relay(
    inner: &Arc<Inner>,
    conn_index: u64,
    client: TcpStream,
    upstream: TcpStream,
) -> io::Result<()> {
    let client_w = client.try_clone()?;
    let upstream_w = upstream.try_clone()?;
    {
        let mut socks = inner.socks.lock().unwrap();
        socks.push(client.try_clone()?);
        socks.push(upstream.try_clone()?);
    }
    // direction index feeds the rng stream, so up and down draw independently
    for (dir, src, dst, stats) in [
        (0u64, client, upstream_w, Arc::clone(&inner.up)),
        (1u64, upstream, client_w, Arc::clone(&inner.down)),
    ] {
        let schedule = ReleaseSchedule::new(
            inner.scenario.clone(),
            inner.loss.clone(),
            mix_u64(mix_u64(inner.seed, conn_index), dir),
        );
        let (tx, rx) = mpsc::sync_channel::<(Vec<u8>, u64)>(1024);
        let peer_teardown = src.try_clone()?;
        let name = if dir == 0 { "up" } else { "down" };
        spawn_counted(inner, &format!("proxy-{name}-r-{conn_index}"), {
            let stats = Arc::clone(&stats);
            move || relay_reader(src, tx, schedule, &stats)
        })?;
        spawn_counted(inner, &format!("proxy-{name}-w-{conn_index}"), move || {
            relay_writer(dst, peer_teardown, rx)
        })?;
    }
    Ok(())
}

fn spawn_counted(
    inner: &Arc<Inner>,
    name: &str,
    f: impl FnOnce() + Send + 'static,
) -> io::Result<()> {
    inner.active.fetch_add(1, Ordering::SeqCst);
    let counter = Arc::clone(inner);
    let spawned = rt::spawn(name, move || {
        f();
        counter.active.fetch_sub(1, Ordering::SeqCst);
    });
    if spawned.is_err() {
        inner.active.fetch_sub(1, Ordering::SeqCst);
    }
    spawned.map(|_| ())
}

fn relay_reader(
    mut src: TcpStream,
    tx: SyncSender<(Vec<u8>, u64)>,
    mut schedule: ReleaseSchedule,
    stats: &DirStats,
) {
    use crate::codec::FrameStatus;

    let mut acc: Vec<u8> = Vec::new();
    let mut scratch = vec![0u8; 16 * 1024];
    let mut frame_mode = true;
    'outer: loop {
        let n = match src.read(&mut scratch) {
            Ok(0) | Err(_) => break,
            Ok(n) => n,
        };
        acc.extend_from_slice(&scratch[..n]);
        if frame_mode {
            loop {
                match crate::codec::frame_length(&acc) {
                    FrameStatus::Ready(flen) if flen <= MAX_RELAY_FRAME => {
                        let chunk: Vec<u8> = acc.drain(..flen).collect();
                        if !dispatch(chunk, &mut schedule, stats, &tx) {
                            break 'outer;
                        }
                    }
                    // oversized or unframeable: relay this direction raw
                    FrameStatus::Ready(_) | FrameStatus::Invalid(_) => {
                        frame_mode = false;
                        break;
                    }
                    FrameStatus::Need(_) => break,
                }
            }
        }
        if !frame_mode && !acc.is_empty() {
            let chunk = std::mem::take(&mut acc);
            if !dispatch(chunk, &mut schedule, stats, &tx) {
                break;
            }
        }
    }
    // a trailing partial frame still belongs to the peer
    if !acc.is_empty() {
        dispatch(acc, &mut schedule, stats, &tx);
    }
}

fn dispatch(
    chunk: Vec<u8>,
    schedule: &mut ReleaseSchedule,
    stats: &DirStats,
    tx: &SyncSender<(Vec<u8>, u64)>,
) -> bool {
    let decision = schedule.schedule_chunk(chunk.len(), clock::now_ns());
    stats.chunks.fetch_add(1, Ordering::SeqCst);
    stats.bytes.fetch_add(chunk.len() as u64, Ordering::SeqCst);
    if decision.penalty_ms > 0.0 {
        stats.penalties.fetch_add(1, Ordering::SeqCst);
    }
    tx.send((chunk, decision.release_ns)).is_ok()
}

fn relay_writer(mut dst: TcpStream, peer: TcpStream, rx: Receiver<(Vec<u8>, u64)>) {
    while let Ok((bytes, release_ns)) = rx.recv() {
        clock::sleep_until_ns(release_ns);
        if dst.write_all(&bytes).is_err() {
            let _ = dst.shutdown(Shutdown::Both);
            let _ = peer.shutdown(Shutdown::Both);
            return;
        }
    }
    // reader saw EOF and the queue is drained: pass the FIN along
    let _ = dst.shutdown(Shutdown::Write);
}
