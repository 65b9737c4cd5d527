//! Payload-size scaling across network scenarios.
//!
//! The full-size experiment pushes 1 KiB, 10 KiB and 1 MiB payloads; this
//! example caps the top size at 100 KiB so the worst-case scenario still
//! finishes quickly. Two things should show in the output: medians grow
//! with payload size, and impairment stretches large payloads much harder
//! than small ones.
//!
//! Run with: cargo run --example payload_experiment

use std::path::PathBuf;

use benchkit::plan::{AckPolicy, BrokerMeta, TestKind};
use benchkit::report::{load_summary, RunFilters};
use benchkit::stub::{self, StubConfig};
use benchkit::{run_plan, BrokerEndpoint, Scenario, TestPlan, TestSpec};

fn main() {
    let broker = stub::spawn(StubConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        faults: Default::default(),
    })
    .expect("spawn stub");

    let sizes: [(&str, usize); 3] = [
        ("payload-1k", 1024),
        ("payload-10k", 10 * 1024),
        ("payload-100k", 100 * 1024),
    ];
    let tests = sizes
        .iter()
        .map(|&(name, size)| TestSpec {
            name: name.into(),
            kind: TestKind::Payload,
            publisher_threads: 5,
            publish_interval_ms: 50,
            messages_per_publisher: 2,
            payload_size: Some(size),
            qos: 1,
            repetitions: 2,
            warmup_runs: 0,
        })
        .collect();

    let plan = TestPlan {
        brokers: vec![BrokerEndpoint {
            name: "stub".into(),
            host: "127.0.0.1".into(),
            port: broker.local_addr().port(),
            metadata: BrokerMeta {
                language: "Rust".into(),
                arm64_supported: true,
                mqtt311: true,
                mqtt5: false,
            },
        }],
        scenarios: vec![Scenario::local(), Scenario::worst()],
        tests,
        proxy_listen: "127.0.0.1:0".parse().unwrap(),
        output_dir: PathBuf::from("target/examples-out/payload"),
        seed: 7,
        loss: Default::default(),
        ack: AckPolicy::default(),
    };

    let mut progress = |line: &str| eprintln!("  {line}");
    let outcome = run_plan(&plan, &RunFilters::default(), &mut progress).expect("run");
    assert_eq!(outcome.cells_failed, 0, "stub cells must all complete");

    let summary = load_summary(&outcome.out_dir).expect("summary");
    for scenario in ["local", "worst"] {
        println!("scenario {scenario}:");
        for (name, size) in sizes {
            let pooled = summary
                .cells
                .iter()
                .find(|c| c.scenario == scenario && c.test == name)
                .and_then(|c| c.pooled.as_ref())
                .expect("pooled stats");
            println!(
                "  {:>8} bytes: median {:>8.2} ms, iqr {:>7.2} ms",
                size, pooled.median, pooled.iqr
            );
        }
    }
    println!("results stored in {}", outcome.out_dir.display());
    broker.shutdown();
}
