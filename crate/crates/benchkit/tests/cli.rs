//! End-to-end tests for the benchkit binary: exit codes, file layout and
//! output formats, with an in-process stub standing in for a broker.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use benchkit::report::{load_summary, summary_json_path};
use benchkit::stub::{self, FaultPlan, StubConfig, StubHandle};
use benchkit::{ClientConfig, Session};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_benchkit"));
    // keep the host environment from steering output locations
    cmd.env_remove("BENCHKIT_OUT");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("spawn benchkit");
    assert!(
        output.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn exit_code(cmd: &mut Command) -> (i32, String, String) {
    let output = cmd.output().expect("spawn benchkit");
    (
        output.status.code().expect("exit code"),
        String::from_utf8_lossy(&output.stdout).into_owned(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

fn clean_stub() -> StubHandle {
    stub::spawn(StubConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        faults: FaultPlan::default(),
    })
    .expect("spawn stub")
}

/// Minimal but floor-respecting plan: config repetitions must be >= 10.
fn tiny_config(dir: &Path, port: u16, out: &Path) -> std::path::PathBuf {
    let path = dir.join("benchkit.yml");
    let text = format!(
        "brokers:\n\
         \x20 - name: stub\n\
         \x20   host: 127.0.0.1\n\
         \x20   port: {port}\n\
         scenarios: [local]\n\
         tests:\n\
         \x20 - name: offset\n\
         \x20   kind: offset\n\
         \x20   publisher_threads: 2\n\
         \x20   publish_interval_ms: 10\n\
         \x20   messages_per_publisher: 1\n\
         \x20   repetitions: 10\n\
         \x20   warmup_runs: 0\n\
         output_dir: {}\n\
         seed: 6\n",
        out.display()
    );
    std::fs::write(&path, text).expect("write config");
    path
}

struct ChildGuard(Child);

impl Drop for ChildGuard {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Spawn a parking subcommand and return it with its announced address.
fn spawn_parked(args: &[&str]) -> (ChildGuard, String) {
    let mut child = bin()
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn benchkit");
    let stdout = child.stdout.take().expect("piped stdout");
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).expect("read announce line");
    let addr = line
        .split("listening on ")
        .nth(1)
        .and_then(|rest| rest.split_whitespace().next())
        .unwrap_or_else(|| panic!("no address in {line:?}"))
        .to_string();
    (ChildGuard(child), addr)
}

#[test]
fn help_and_version_exit_zero() {
    let out = run_ok(bin().arg("--help"));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    for sub in ["run", "proxy", "stub", "scenarios", "report"] {
        assert!(text.contains(sub), "top help misses {sub}");
        run_ok(bin().args([sub, "--help"]));
    }
    let out = run_ok(bin().arg("--version"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("benchkit"));

    let (code, _, _) = exit_code(bin().arg("--definitely-not-a-flag"));
    assert_eq!(code, 1);
    let (code, _, _) = exit_code(&mut bin());
    assert_eq!(code, 1, "a subcommand is required");
}

#[test]
fn run_produces_results_and_report_rerenders_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let broker = clean_stub();
    let config = tiny_config(dir.path(), broker.local_addr().port(), &out);

    let output = run_ok(bin().args(["run", "--config", config.to_str().unwrap()]));
    broker.shutdown();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("offset"), "table row missing: {stdout}");
    assert!(stdout.contains("summary: "), "summary path missing: {stdout}");

    // layout: per-repetition CSVs, summary.json, summary.csv, boxplots
    assert!(summary_json_path(&out).is_file());
    assert!(out.join("summary.csv").is_file());
    assert!(out.join("stub/local/offset/rep0.csv").is_file());
    assert!(out.join("stub/local/offset/rep9.csv").is_file());
    assert!(out.join("boxplot/stub__local__offset.json").is_file());
    let summary = load_summary(&out).expect("summary parses");
    assert_eq!(summary.cells.len(), 1);
    assert_eq!(summary.seed, 6);

    // report re-renders without re-running
    let in_arg = out.to_str().unwrap();
    let table = run_ok(bin().args(["report", "--in", in_arg]));
    assert!(String::from_utf8_lossy(&table.stdout).contains("offset"));
    let md = run_ok(bin().args(["report", "--in", in_arg, "--format", "markdown"]));
    assert!(String::from_utf8_lossy(&md.stdout).starts_with("| test |"));
    let csv = run_ok(bin().args(["report", "--in", in_arg, "--format", "csv"]));
    assert!(String::from_utf8_lossy(&csv.stdout)
        .starts_with("broker,scenario,test,repetition,n,min,q1,median,q3,max,iqr,mean,exclusions"));
    let json = run_ok(bin().args(["report", "--in", in_arg, "--format", "json"]));
    let parsed: serde_json::Value =
        serde_json::from_slice(&json.stdout).expect("json output parses");
    assert_eq!(parsed["seed"], 6);
}

#[test]
fn run_exit_codes_cover_usage_failure_and_partial_runs() {
    // missing config: usage/config error
    let (code, _, err) = exit_code(bin().args(["run", "--config", "/nonexistent/nope.yml"]));
    assert_eq!(code, 1);
    assert!(err.contains("error"), "stderr: {err}");

    // a dead broker beside a live one: partial failure
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let broker = clean_stub();
    let config = dir.path().join("two.yml");
    std::fs::write(
        &config,
        format!(
            "brokers:\n  - name: stub\n    host: 127.0.0.1\n    port: {}\n  - name: dead\n    host: 127.0.0.1\n    port: 1\nscenarios: [local]\ntests:\n  - name: offset\n    kind: offset\n    publisher_threads: 2\n    publish_interval_ms: 10\n    messages_per_publisher: 1\n    repetitions: 10\n    warmup_runs: 0\noutput_dir: {}\nseed: 6\n",
            broker.local_addr().port(),
            out.display()
        ),
    )
    .unwrap();
    let (code, stdout, err) = exit_code(bin().args(["run", "--config", config.to_str().unwrap()]));
    broker.shutdown();
    assert_eq!(code, 2, "stdout: {stdout}\nstderr: {err}");
    assert!(err.contains("1 of 2 cells failed"), "stderr: {err}");
    let summary = load_summary(&out).expect("summary written despite failure");
    assert_eq!(summary.cells.len(), 2);

    // unknown filter values: usage error before anything runs
    let (code, _, err) =
        exit_code(bin().args(["run", "--config", config.to_str().unwrap(), "--only", "nosuch"]));
    assert_eq!(code, 1);
    assert!(err.contains("nosuch"), "stderr: {err}");
    let (code, _, err) = exit_code(bin().args([
        "run",
        "--config",
        config.to_str().unwrap(),
        "--scenario",
        "optimaal",
    ]));
    assert_eq!(code, 1);
    assert!(err.contains("optimaal"), "stderr: {err}");
}

#[test]
fn run_filters_and_output_overrides_are_honored() {
    let dir = tempfile::tempdir().unwrap();
    let config_out = dir.path().join("from-config");
    let broker = clean_stub();
    let config = tiny_config(dir.path(), broker.local_addr().port(), &config_out);
    let config = config.to_str().unwrap();

    // BENCHKIT_OUT beats the config's output_dir
    let env_out = dir.path().join("from-env");
    run_ok(bin().args(["run", "--config", config]).env("BENCHKIT_OUT", &env_out));
    assert!(summary_json_path(&env_out).is_file());
    assert!(!config_out.exists(), "config output_dir used despite BENCHKIT_OUT");

    // --out beats BENCHKIT_OUT; filters and seed are recorded
    let flag_out = dir.path().join("from-flag");
    run_ok(
        bin()
            .args([
                "run", "--config", config,
                "--only", "stub",
                "--scenario", "local",
                "--seed", "77",
                "--out", flag_out.to_str().unwrap(),
            ])
            .env("BENCHKIT_OUT", &env_out),
    );
    broker.shutdown();
    let summary = load_summary(&flag_out).expect("summary in --out dir");
    assert_eq!(summary.seed, 77);
    assert_eq!(summary.filters.brokers.as_deref(), Some(&["stub".to_string()][..]));
    assert_eq!(summary.filters.scenarios.as_deref(), Some(&["local".to_string()][..]));
}

#[test]
fn report_on_an_empty_directory_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = exit_code(bin().args(["report", "--in", dir.path().to_str().unwrap()]));
    assert_eq!(code, 1);
    assert!(err.contains("no results found"), "stderr: {err}");
}

#[test]
fn scenarios_lists_presets_and_config_additions() {
    // without a config: exactly the three presets
    let out = run_ok(bin().args(["scenarios"]).current_dir(std::env::temp_dir()));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    for (name, latency) in [("local", "0"), ("optimal", "2.5"), ("worst", "6.25")] {
        let row = text.lines().find(|l| l.starts_with(name)).unwrap_or_else(|| {
            panic!("missing row for {name} in:\n{text}")
        });
        assert!(row.contains(latency), "row {row:?} misses latency {latency}");
    }
    assert_eq!(text.lines().count(), 4, "header plus three presets:\n{text}");

    // a config adds its own scenarios to the listing
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("plan.yml");
    std::fs::write(
        &config,
        "brokers:\n  - name: b\n    host: 127.0.0.1\n    port: 1883\n\
         scenarios:\n  - local\n  - name: lan\n    latency_ms: 0.5\n    jitter_ms: 0.1\n\
         tests:\n  - name: offset\n    kind: offset\n",
    )
    .unwrap();
    let out = run_ok(bin().args(["scenarios", "--config", config.to_str().unwrap()]));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert_eq!(text.lines().count(), 5, "presets plus lan:\n{text}");
    assert!(text.lines().any(|l| l.starts_with("lan") && l.contains("0.5")));

    // duplicate scenario names in the config are an error
    std::fs::write(
        &config,
        "brokers:\n  - name: b\n    host: 127.0.0.1\n    port: 1883\n\
         scenarios: [local, local]\n\
         tests:\n  - name: offset\n    kind: offset\n",
    )
    .unwrap();
    let (code, _, err) = exit_code(bin().args(["scenarios", "--config", config.to_str().unwrap()]));
    assert_eq!(code, 1);
    assert!(err.contains("duplicate"), "stderr: {err}");

    // an explicitly named but missing config is an error too
    let (code, _, _) = exit_code(bin().args(["scenarios", "--config", "/nonexistent/nope.yml"]));
    assert_eq!(code, 1);
}

#[test]
fn stub_subcommand_serves_mqtt() {
    let (_child, addr) = spawn_parked(&["stub", "--listen", "127.0.0.1:0"]);
    let mut sub = Session::connect(addr.as_str(), ClientConfig::new("cli-sub")).expect("connect");
    sub.subscribe_qos1("cli/#").expect("subscribe");
    let mut publisher =
        Session::connect(addr.as_str(), ClientConfig::new("cli-pub")).expect("connect");
    publisher.publish_qos1("cli/x", b"ping".to_vec()).expect("publish");
    let delivery = sub
        .poll_publish(Duration::from_secs(2))
        .expect("poll")
        .expect("delivery");
    assert_eq!(delivery.payload, b"ping");
    publisher.disconnect().ok();
    sub.disconnect().ok();
}

#[test]
fn proxy_subcommand_relays_with_impairment() {
    let broker = clean_stub();
    let upstream = broker.local_addr().to_string();
    let (_child, addr) = spawn_parked(&[
        "proxy",
        "--listen",
        "127.0.0.1:0",
        "--upstream",
        &upstream,
        "--scenario",
        "optimal",
        "--seed",
        "3",
    ]);
    let mut session =
        Session::connect(addr.as_str(), ClientConfig::new("cli-prox")).expect("connect");
    let rtt = session.publish_qos1("cli/x", b"ping".to_vec()).expect("publish");
    assert!(
        rtt >= Duration::from_millis(2),
        "impaired PUBACK came back in {rtt:?}"
    );
    session.disconnect().ok();
    broker.shutdown();

    // unknown preset is a usage error
    let (code, _, err) = exit_code(bin().args([
        "proxy", "--listen", "127.0.0.1:0", "--upstream", "127.0.0.1:1883",
        "--scenario", "fastest",
    ]));
    assert_eq!(code, 1);
    assert!(err.contains("fastest"), "stderr: {err}");
}
