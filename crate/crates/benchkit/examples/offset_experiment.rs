//! The performance-offset experiment in miniature.
//!
//! The full-size shape is 100 publisher threads firing "hello world" every
//! 250 ms; this example shrinks the fleet to 10 threads at 50 ms so it
//! finishes in seconds. A stub broker stands in for a real one, the
//! impairment proxy applies each scenario preset, and the per-scenario
//! median offsets against the unimpaired baseline come out at the end.
//!
//! Run with: cargo run --example offset_experiment

use std::path::PathBuf;

use benchkit::plan::{AckPolicy, BrokerMeta, TestKind};
use benchkit::report::{load_summary, RunFilters, TableStyle};
use benchkit::stub::{self, StubConfig};
use benchkit::{run_plan, BrokerEndpoint, Scenario, TestPlan, TestSpec};

fn main() {
    let broker = stub::spawn(StubConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        faults: Default::default(),
    })
    .expect("spawn stub");

    let out = PathBuf::from("target/examples-out/offset");
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
        scenarios: Scenario::presets(),
        tests: vec![TestSpec {
            name: "offset".into(),
            kind: TestKind::Offset,
            publisher_threads: 10,
            publish_interval_ms: 50,
            messages_per_publisher: 1,
            payload_size: None,
            qos: 1,
            repetitions: 3,
            warmup_runs: 1,
        }],
        proxy_listen: "127.0.0.1:0".parse().unwrap(),
        output_dir: out,
        seed: 42,
        loss: Default::default(),
        ack: AckPolicy::default(),
    };

    let mut progress = |line: &str| eprintln!("  {line}");
    let outcome = run_plan(&plan, &RunFilters::default(), &mut progress).expect("run");
    assert_eq!(outcome.cells_failed, 0, "stub cells must all complete");

    let summary = load_summary(&outcome.out_dir).expect("summary");
    print!(
        "{}",
        benchkit::report::render_median_iqr_table(&summary, TableStyle::Plain)
    );

    let median = |scenario: &str| -> f64 {
        summary
            .cells
            .iter()
            .find(|c| c.scenario == scenario)
            .and_then(|c| c.pooled.as_ref())
            .map(|s| s.median)
            .expect("pooled median")
    };
    let local = median("local");
    for name in ["optimal", "worst"] {
        println!("{name} offset over local: {:+.2} ms", median(name) - local);
    }
    println!("results stored in {}", outcome.out_dir.display());
    broker.shutdown();
}
