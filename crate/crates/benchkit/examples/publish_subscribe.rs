//! Client engine basics: QoS 1 publish, wildcard subscribe, timestamped
//! benchmark payloads.
//!
//! Every benchmark message carries a 16 byte header (magic, send time,
//! sequence number) so the receiving side can compute one-way latency
//! without correlating packet ids. This example round-trips a few messages
//! through the stub and extracts those latencies.
//!
//! Run with: cargo run --example publish_subscribe

use std::time::Duration;

use benchkit::payload::{extract_latency, make_offset_payload};
use benchkit::stub::{self, StubConfig};
use benchkit::{ClientConfig, Session};

fn main() {
    let broker = stub::spawn(StubConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        faults: Default::default(),
    })
    .expect("spawn stub");
    let addr = broker.local_addr();

    let mut sub = Session::connect(addr, ClientConfig::new("ex-sub")).expect("subscriber");
    sub.subscribe_qos1("fleet/#").expect("subscribe");

    let mut publisher = Session::connect(addr, ClientConfig::new("ex-pub")).expect("publisher");
    for sequence in 0..5u32 {
        // 27 bytes: header + "hello world", the fixed offset-test payload
        let body = make_offset_payload(sequence);
        publisher
            .publish_qos1(&format!("fleet/p000/{sequence}"), body)
            .expect("publish");
    }

    let mut received = 0;
    while let Some(msg) = sub.poll_publish(Duration::from_millis(300)).expect("poll") {
        let sample = extract_latency(&msg.payload, msg.received_ns).expect("bench payload");
        received += 1;
        println!(
            "{}: sequence {} took {:.3} ms broker-hop one way",
            msg.topic,
            sample.sequence,
            sample.latency_ns as f64 / 1e6
        );
    }
    assert_eq!(received, 5, "stub must deliver every publish");

    publisher.disconnect().ok();
    sub.disconnect().ok();
    broker.shutdown();
}
