//! In-process MQTT 3.1.1 stub broker with fault injection.
//!
//! Spawns a stub that drops the first PUBACK it owes. The publisher times
//! out, retransmits with DUP set, and the stub fans the message out again,
//! so the subscriber sees the same publish twice. The benchmark runner
//! dedups by (publisher, sequence) on the receive side; this example just
//! watches the duplicate arrive.
//!
//! Run with: cargo run --example stub_broker

use std::time::Duration;

use benchkit::stub::{self, FaultPlan, StubConfig};
use benchkit::{ClientConfig, Session};

fn main() {
    let broker = stub::spawn(StubConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        faults: FaultPlan {
            drop_first_n_pubacks: 1,
            ..FaultPlan::default()
        },
    })
    .expect("spawn stub");
    let addr = broker.local_addr();
    println!("stub broker on {addr}");

    let mut sub = Session::connect(addr, ClientConfig::new("ex-sub")).expect("subscriber");
    sub.subscribe_qos1("demo/#").expect("subscribe");

    // short ack timeout so the dropped PUBACK turns into a quick retransmit
    let mut cfg = ClientConfig::new("ex-pub");
    cfg.ack_timeout = Duration::from_millis(200);
    let mut publisher = Session::connect(addr, cfg).expect("publisher");

    let rtt = publisher
        .publish_qos1("demo/greeting", b"hello".to_vec())
        .expect("publish");
    println!("PUBACK after {rtt:?} (includes one retransmit round)");

    let mut copies = 0;
    while let Some(msg) = sub.poll_publish(Duration::from_millis(300)).expect("poll") {
        copies += 1;
        println!(
            "delivery {copies}: topic={} qos={:?} payload={:?}",
            msg.topic,
            msg.qos,
            String::from_utf8_lossy(&msg.payload)
        );
    }
    println!("{copies} deliveries of 1 publish; dedup is the receiver's job");

    publisher.disconnect().ok();
    sub.disconnect().ok();
    broker.shutdown();
}
