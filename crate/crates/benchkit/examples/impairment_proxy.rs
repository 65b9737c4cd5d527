//! Network impairment as a TCP proxy in front of a broker.
//!
//! Starts a stub broker, puts the "optimal" scenario proxy in front of it
//! (2.5 ms one-way delay, 0.5 ms jitter, 0.04% segment loss modeled as a
//! retransmission penalty), then publishes through both paths and compares
//! PUBACK round trips. Ends with the proxy's per-direction counters.
//!
//! Run with: cargo run --example impairment_proxy

use benchkit::proxy;
use benchkit::stub::{self, StubConfig};
use benchkit::{ClientConfig, ProxyConfig, Scenario, Session};

fn main() {
    let broker = stub::spawn(StubConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        faults: Default::default(),
    })
    .expect("spawn stub");

    let proxy = proxy::spawn(ProxyConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        upstream: broker.local_addr(),
        scenario: Scenario::optimal(),
        loss: Default::default(),
        seed: 7,
    })
    .expect("spawn proxy");
    println!(
        "stub on {}, optimal-scenario proxy on {}",
        broker.local_addr(),
        proxy.local_addr()
    );

    let direct = median_rtt("direct", broker.local_addr());
    let impaired = median_rtt("impaired", proxy.local_addr());
    println!(
        "added delay is roughly one RTT of the scenario: {:.2} ms",
        impaired - direct
    );

    let snapshot = proxy.shutdown();
    println!(
        "proxy counters: up {} chunks / {} bytes ({} penalized), down {} chunks / {} bytes ({} penalized)",
        snapshot.up.chunks,
        snapshot.up.bytes,
        snapshot.up.penalties,
        snapshot.down.chunks,
        snapshot.down.bytes,
        snapshot.down.penalties
    );
    broker.shutdown();
}

fn median_rtt(label: &str, addr: std::net::SocketAddr) -> f64 {
    let mut session =
        Session::connect(addr, ClientConfig::new(format!("ex-{label}"))).expect("connect");
    let mut rtts_ms: Vec<f64> = (0..15)
        .map(|i| {
            let rtt = session
                .publish_qos1("demo/rtt", format!("ping {i}").into_bytes())
                .expect("publish");
            rtt.as_secs_f64() * 1e3
        })
        .collect();
    session.disconnect().ok();
    rtts_ms.sort_by(f64::total_cmp);
    let median = rtts_ms[rtts_ms.len() / 2];
    println!("{label:>9}: median PUBACK rtt {median:.2} ms over {} publishes", rtts_ms.len());
    median
}
