//! The reporting pipeline end to end.
//!
//! Runs one tiny cell to get a results directory, then shows everything the
//! report module can do with it: median/IQR tables in plain and markdown
//! form, the flat summary CSV, boxplot series exports, and rebuilding a
//! summary from bare per-repetition record CSVs when summary.json is gone.
//!
//! Run with: cargo run --example render_report

use std::path::PathBuf;

use benchkit::plan::{AckPolicy, BrokerMeta, TestKind};
use benchkit::report::{
    export_boxplots, load_results, render_median_iqr_table, summary_csv_text,
    summary_json_path, RunFilters, TableStyle,
};
use benchkit::stub::{self, StubConfig};
use benchkit::{run_plan, BrokerEndpoint, Scenario, TestPlan, TestSpec};

fn main() {
    let broker = stub::spawn(StubConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        faults: Default::default(),
    })
    .expect("spawn stub");

    let out = PathBuf::from("target/examples-out/report-demo");
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
        scenarios: vec![Scenario::local()],
        tests: vec![TestSpec {
            name: "offset".into(),
            kind: TestKind::Offset,
            publisher_threads: 3,
            publish_interval_ms: 20,
            messages_per_publisher: 2,
            payload_size: None,
            qos: 1,
            repetitions: 2,
            warmup_runs: 0,
        }],
        proxy_listen: "127.0.0.1:0".parse().unwrap(),
        output_dir: out.clone(),
        seed: 3,
        loss: Default::default(),
        ack: AckPolicy::default(),
    };
    let outcome = run_plan(&plan, &RunFilters::default(), &mut |_| {}).expect("run");
    assert_eq!(outcome.cells_failed, 0);
    broker.shutdown();

    let summary = load_results(&out).expect("load");

    println!("== plain table ==");
    print!("{}", render_median_iqr_table(&summary, TableStyle::Plain));
    println!();
    println!("== markdown table ==");
    print!("{}", render_median_iqr_table(&summary, TableStyle::Markdown));
    println!();
    println!("== summary csv, first rows ==");
    for line in summary_csv_text(&summary).lines().take(4) {
        println!("{line}");
    }

    let series = export_boxplots(&out, &summary).expect("boxplots");
    println!();
    println!("{series} boxplot series under {}", out.join("boxplot").display());

    // record CSVs alone are enough to get a summary back
    std::fs::remove_file(summary_json_path(&out)).expect("remove summary.json");
    let rebuilt = load_results(&out).expect("rebuild");
    println!();
    println!("after deleting summary.json: {}", rebuilt.metadata.source);
    assert_eq!(rebuilt.cells.len(), summary.cells.len());
}
