//! Plan configuration: YAML schema, defaults and validation.
//!
//! A plan is the full test matrix: every broker crossed with every scenario
//! and every test. Loading resolves scenario names against the built-in
//! presets, fills defaults, and rejects anything the runner could trip over
//! later (unknown keys, bad names, out-of-range parameters), so a `TestPlan`
//! in hand is always runnable as-is.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::payload;
use crate::scenario::{LossModel, Scenario};

/// Where `benchkit run` looks when no config flag is given.
pub const DEFAULT_CONFIG_PATH: &str = "./benchkit.yml";

/// Configurable payload sizes, inclusive. The lower bound is the
/// measurement header; the upper bound keeps frames inside the proxy's
/// frame-mode cap.
pub const MIN_PAYLOAD_BYTES: usize = payload::HEADER_BYTES;
pub const MAX_PAYLOAD_BYTES: usize = 8 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config schema: {0}")]
    Schema(String),
    #[error("unknown scenario {0:?} (presets: local, optimal, worst)")]
    UnknownScenario(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Offset,
    Payload,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestKind::Offset => "offset",
            TestKind::Payload => "payload",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrokerMeta {
    pub language: String,
    pub arm64_supported: bool,
    pub mqtt311: bool,
    pub mqtt5: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrokerEndpoint {
    pub name: String,
    pub host: String,
    pub port: u16,
    pub metadata: BrokerMeta,
}

impl BrokerEndpoint {
    pub fn address(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

/// name, language, arm64, mqtt 3.1.1, mqtt 5
const BROKER_REGISTRY: &[(&str, &str, bool, bool, bool)] = &[
    ("mosquitto", "C", true, true, true),
    ("emqx", "Erlang", true, true, true),
    ("rabbitmq", "Starlark", true, true, false),
    ("vernemq", "Erlang", false, true, true),
    ("hivemq", "Java", false, true, true),
];

/// Metadata defaults for the well known brokers; `None` for names the
/// registry does not carry.
pub fn known_broker_meta(name: &str) -> Option<BrokerMeta> {
    BROKER_REGISTRY
        .iter()
        .find(|(n, ..)| n.eq_ignore_ascii_case(name))
        .map(|&(_, language, arm64, v311, v5)| BrokerMeta {
            language: language.to_string(),
            arm64_supported: arm64,
            mqtt311: v311,
            mqtt5: v5,
        })
}

fn default_meta(name: &str) -> BrokerMeta {
    known_broker_meta(name).unwrap_or(BrokerMeta {
        language: "unknown".to_string(),
        arm64_supported: false,
        mqtt311: true,
        mqtt5: false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSpec {
    pub name: String,
    pub kind: TestKind,
    pub publisher_threads: u32,
    pub publish_interval_ms: u64,
    pub messages_per_publisher: u32,
    /// `None` for offset tests, which always use the fixed payload.
    pub payload_size: Option<usize>,
    pub qos: u8,
    pub repetitions: u32,
    pub warmup_runs: u32,
}

impl TestSpec {
    /// On-the-wire payload size for this test's messages.
    pub fn payload_bytes(&self) -> usize {
        match self.kind {
            TestKind::Offset => payload::HEADER_BYTES + payload::OFFSET_TEXT.len(),
            TestKind::Payload => self.payload_size.unwrap_or(MIN_PAYLOAD_BYTES),
        }
    }

    pub fn expected_messages(&self) -> u64 {
        u64::from(self.publisher_threads) * u64::from(self.messages_per_publisher)
    }
}

/// Publish acknowledgement policy applied to every publisher session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AckPolicy {
    pub ack_timeout_ms: u64,
    pub max_retransmits: u32,
}

impl Default for AckPolicy {
    fn default() -> Self {
        AckPolicy { ack_timeout_ms: 5000, max_retransmits: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    pub brokers: Vec<BrokerEndpoint>,
    pub scenarios: Vec<Scenario>,
    pub tests: Vec<TestSpec>,
    pub proxy_listen: SocketAddr,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub loss: LossModel,
    pub ack: AckPolicy,
}

impl TestPlan {
    pub fn cell_count(&self) -> usize {
        self.brokers.len() * self.scenarios.len() * self.tests.len()
    }
}

// file-side schema: everything optional that has a default

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    brokers: Vec<BrokerFile>,
    #[serde(default)]
    scenarios: Option<Vec<ScenarioEntry>>,
    tests: Vec<TestFile>,
    #[serde(default)]
    proxy: Option<String>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BrokerFile {
    name: String,
    host: String,
    port: u16,
    #[serde(default)]
    metadata: Option<BrokerMeta>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ScenarioEntry {
    Name(String),
    Custom(CustomScenario),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomScenario {
    name: String,
    latency_ms: f64,
    #[serde(default)]
    jitter_ms: f64,
    #[serde(default)]
    loss_pct: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestFile {
    name: String,
    kind: TestKind,
    #[serde(default)]
    publisher_threads: Option<u32>,
    #[serde(default)]
    publish_interval_ms: Option<u64>,
    #[serde(default)]
    messages_per_publisher: Option<u32>,
    #[serde(default)]
    payload_size: Option<usize>,
    #[serde(default)]
    qos: Option<u8>,
    #[serde(default)]
    repetitions: Option<u32>,
    #[serde(default)]
    warmup_runs: Option<u32>,
}

/// Names end up in topic levels, directory names and report columns.
fn check_name(what: &str, name: &str) -> Result<(), PlanError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(PlanError::Invalid(format!(
            "{what} name {name:?}: use only ASCII letters, digits, '-' and '_'"
        )))
    }
}

pub fn load_plan(path: &Path) -> Result<TestPlan, PlanError> {
    let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_plan(&text)
}

pub fn parse_plan(text: &str) -> Result<TestPlan, PlanError> {
    let file: PlanFile =
        serde_yaml::from_str(text).map_err(|e| PlanError::Schema(e.to_string()))?;

    if file.brokers.is_empty() {
        return Err(PlanError::Invalid("at least one broker is required".into()));
    }
    let mut brokers = Vec::with_capacity(file.brokers.len());
    for b in file.brokers {
        check_name("broker", &b.name)?;
        if b.host.is_empty() {
            return Err(PlanError::Invalid(format!("broker {}: empty host", b.name)));
        }
        if brokers.iter().any(|e: &BrokerEndpoint| e.name == b.name) {
            return Err(PlanError::Invalid(format!("duplicate broker name {:?}", b.name)));
        }
        let metadata = b.metadata.unwrap_or_else(|| default_meta(&b.name));
        brokers.push(BrokerEndpoint { name: b.name, host: b.host, port: b.port, metadata });
    }

    let scenarios = match file.scenarios {
        None => Scenario::presets(),
        Some(entries) => {
            if entries.is_empty() {
                return Err(PlanError::Invalid("scenarios list is empty".into()));
            }
            let mut out: Vec<Scenario> = Vec::with_capacity(entries.len());
            for entry in entries {
                let s = match entry {
                    ScenarioEntry::Name(name) => Scenario::preset(&name)
                        .ok_or(PlanError::UnknownScenario(name))?,
                    ScenarioEntry::Custom(c) => {
                        check_name("scenario", &c.name)?;
                        let s = Scenario::new(&c.name, c.latency_ms, c.jitter_ms, c.loss_pct);
                        s.validate()
                            .map_err(|e| PlanError::Invalid(format!("scenario {}: {e}", s.name)))?;
                        s
                    }
                };
                if out.iter().any(|e| e.name == s.name) {
                    return Err(PlanError::Invalid(format!(
                        "duplicate scenario name {:?}",
                        s.name
                    )));
                }
                out.push(s);
            }
            out
        }
    };

    if file.tests.is_empty() {
        return Err(PlanError::Invalid("at least one test is required".into()));
    }
    let mut tests = Vec::with_capacity(file.tests.len());
    for t in file.tests {
        check_name("test", &t.name)?;
        if tests.iter().any(|e: &TestSpec| e.name == t.name) {
            return Err(PlanError::Invalid(format!("duplicate test name {:?}", t.name)));
        }
        let qos = t.qos.unwrap_or(1);
        if qos != 1 {
            return Err(PlanError::Invalid(format!(
                "test {}: qos {qos} is not supported, measurements use QoS 1",
                t.name
            )));
        }
        let publisher_threads = t.publisher_threads.unwrap_or(100);
        if publisher_threads == 0 {
            return Err(PlanError::Invalid(format!(
                "test {}: publisher_threads must be at least 1",
                t.name
            )));
        }
        let publish_interval_ms = t.publish_interval_ms.unwrap_or(250);
        if publish_interval_ms == 0 {
            return Err(PlanError::Invalid(format!(
                "test {}: publish_interval_ms must be at least 1",
                t.name
            )));
        }
        let repetitions = t.repetitions.unwrap_or(10);
        if repetitions < 10 {
            return Err(PlanError::Invalid(format!(
                "test {}: repetitions must be at least 10",
                t.name
            )));
        }
        let payload_size = match t.kind {
            TestKind::Offset => {
                if t.payload_size.is_some() {
                    return Err(PlanError::Invalid(format!(
                        "test {}: offset tests use the fixed hello world payload, \
                         payload_size does not apply",
                        t.name
                    )));
                }
                None
            }
            TestKind::Payload => {
                let size = t.payload_size.ok_or_else(|| {
                    PlanError::Invalid(format!(
                        "test {}: payload tests require payload_size",
                        t.name
                    ))
                })?;
                if !(MIN_PAYLOAD_BYTES..=MAX_PAYLOAD_BYTES).contains(&size) {
                    return Err(PlanError::Invalid(format!(
                        "test {}: payload_size {size} outside {MIN_PAYLOAD_BYTES}..={MAX_PAYLOAD_BYTES}",
                        t.name
                    )));
                }
                Some(size)
            }
        };
        let messages_per_publisher = t.messages_per_publisher.unwrap_or(match t.kind {
            TestKind::Offset => 1,
            TestKind::Payload => 10,
        });
        if messages_per_publisher == 0 {
            return Err(PlanError::Invalid(format!(
                "test {}: messages_per_publisher must be at least 1",
                t.name
            )));
        }
        tests.push(TestSpec {
            name: t.name,
            kind: t.kind,
            publisher_threads,
            publish_interval_ms,
            messages_per_publisher,
            payload_size,
            qos,
            repetitions,
            warmup_runs: t.warmup_runs.unwrap_or(1),
        });
    }

    let proxy_listen = match file.proxy {
        None => "127.0.0.1:0".parse().unwrap(),
        Some(text) => text.parse().map_err(|_| {
            PlanError::Invalid(format!("proxy: {text:?} is not a socket address"))
        })?,
    };

    Ok(TestPlan {
        brokers,
        scenarios,
        tests,
        proxy_listen,
        output_dir: file.output_dir.unwrap_or_else(|| PathBuf::from("./results")),
        seed: file.seed.unwrap_or(1),
        loss: LossModel::default(),
        ack: AckPolicy::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
brokers:
  - name: mosquitto
    host: 127.0.0.1
    port: 1883
tests:
  - name: offset
    kind: offset
";

    #[test]
    fn minimal_document_fills_defaults() {
        let plan = parse_plan(MINIMAL).unwrap();
        assert_eq!(plan.seed, 1);
        assert_eq!(plan.output_dir, PathBuf::from("./results"));
        assert_eq!(plan.proxy_listen, "127.0.0.1:0".parse().unwrap());
        assert_eq!(plan.scenarios, Scenario::presets());
        assert_eq!(plan.brokers.len(), 1);
        assert_eq!(plan.brokers[0].address(), "127.0.0.1:1883");

        let t = &plan.tests[0];
        assert_eq!(t.publisher_threads, 100);
        assert_eq!(t.publish_interval_ms, 250);
        assert_eq!(t.messages_per_publisher, 1);
        assert_eq!(t.qos, 1);
        assert_eq!(t.repetitions, 10);
        assert_eq!(t.warmup_runs, 1);
        assert_eq!(t.payload_bytes(), 27);
        assert_eq!(t.expected_messages(), 100);
    }

    #[test]
    fn registry_metadata_matches_the_table() {
        let cases = [
            ("mosquitto", "C", true, true, true),
            ("emqx", "Erlang", true, true, true),
            ("rabbitmq", "Starlark", true, true, false),
            ("vernemq", "Erlang", false, true, true),
            ("hivemq", "Java", false, true, true),
        ];
        for (name, language, arm64, v311, v5) in cases {
            let meta = known_broker_meta(name).unwrap();
            assert_eq!(meta.language, language, "{name}");
            assert_eq!(meta.arm64_supported, arm64, "{name}");
            assert_eq!(meta.mqtt311, v311, "{name}");
            assert_eq!(meta.mqtt5, v5, "{name}");
        }
        assert!(known_broker_meta("somebroker").is_none());
        let fallback = default_meta("somebroker");
        assert_eq!(fallback.language, "unknown");
        assert!(!fallback.arm64_supported);
        assert!(fallback.mqtt311);
        assert!(!fallback.mqtt5);
    }

    #[test]
    fn metadata_override_wins_over_registry() {
        let text = "\
brokers:
  - name: mosquitto
    host: localhost
    port: 1883
    metadata:
      language: C
      arm64_supported: false
      mqtt311: true
      mqtt5: false
tests:
  - name: t
    kind: offset
";
        let plan = parse_plan(text).unwrap();
        assert!(!plan.brokers[0].metadata.arm64_supported);
        assert!(!plan.brokers[0].metadata.mqtt5);
    }

    #[test]
    fn unknown_scenario_is_rejected() {
        let text = format!("{MINIMAL}scenarios: [optimaal]\n");
        match parse_plan(&text) {
            Err(PlanError::UnknownScenario(name)) => assert_eq!(name, "optimaal"),
            other => panic!("expected UnknownScenario, got {other:?}"),
        }
    }

    #[test]
    fn scenarios_mix_presets_and_custom_entries() {
        let text = format!(
            "{MINIMAL}\
scenarios:
  - local
  - name: lan
    latency_ms: 0.5
    jitter_ms: 0.1
tests_unused: 0
"
        );
        // unknown key sanity first
        assert!(matches!(parse_plan(&text), Err(PlanError::Schema(_))));

        let text = format!(
            "{MINIMAL}\
scenarios:
  - local
  - name: lan
    latency_ms: 0.5
    jitter_ms: 0.1
"
        );
        let plan = parse_plan(&text).unwrap();
        assert_eq!(plan.scenarios.len(), 2);
        assert_eq!(plan.scenarios[0], Scenario::local());
        assert_eq!(plan.scenarios[1].name, "lan");
        assert_eq!(plan.scenarios[1].latency_ms, 0.5);
        assert_eq!(plan.scenarios[1].loss_pct, 0.0);
    }

    #[test]
    fn duplicate_and_invalid_scenarios_are_rejected() {
        let dup = format!("{MINIMAL}scenarios: [local, local]\n");
        assert!(matches!(parse_plan(&dup), Err(PlanError::Invalid(_))));

        let bad = format!(
            "{MINIMAL}\
scenarios:
  - name: broken
    latency_ms: -2.0
"
        );
        assert!(matches!(parse_plan(&bad), Err(PlanError::Invalid(_))));
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_name() {
        let text = format!("{MINIMAL}surprise: true\n");
        match parse_plan(&text) {
            Err(PlanError::Schema(msg)) => assert!(msg.contains("surprise"), "{msg}"),
            other => panic!("expected Schema error, got {other:?}"),
        }
    }

    #[test]
    fn payload_tests_require_a_size_and_offset_tests_reject_one() {
        let missing = "\
brokers: [{name: b, host: h, port: 1}]
tests:
  - name: p
    kind: payload
";
        assert!(matches!(parse_plan(missing), Err(PlanError::Invalid(_))));

        let offset_with_size = "\
brokers: [{name: b, host: h, port: 1}]
tests:
  - name: o
    kind: offset
    payload_size: 64
";
        assert!(matches!(parse_plan(offset_with_size), Err(PlanError::Invalid(_))));

        let ok = "\
brokers: [{name: b, host: h, port: 1}]
tests:
  - name: p
    kind: payload
    payload_size: 1024
";
        let plan = parse_plan(ok).unwrap();
        assert_eq!(plan.tests[0].messages_per_publisher, 10);
        assert_eq!(plan.tests[0].payload_bytes(), 1024);

        let too_small = "\
brokers: [{name: b, host: h, port: 1}]
tests:
  - name: p
    kind: payload
    payload_size: 4
";
        assert!(matches!(parse_plan(too_small), Err(PlanError::Invalid(_))));
    }

    #[test]
    fn qos_and_repetition_floors_hold() {
        let qos0 = format!("{MINIMAL}    qos: 0\n");
        assert!(matches!(parse_plan(&qos0), Err(PlanError::Invalid(_))));

        let few = format!("{MINIMAL}    repetitions: 5\n");
        assert!(matches!(parse_plan(&few), Err(PlanError::Invalid(_))));

        let plenty = format!("{MINIMAL}    repetitions: 12\n");
        assert_eq!(parse_plan(&plenty).unwrap().tests[0].repetitions, 12);
    }

    #[test]
    fn names_reject_topic_and_path_separators() {
        for bad in ["a/b", "a+b", "a#b", "a b", "", "a.b"] {
            let text = format!(
                "\
brokers: [{{name: {bad:?}, host: h, port: 1}}]
tests: [{{name: t, kind: offset}}]
"
            );
            assert!(parse_plan(&text).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn full_matrix_cell_count() {
        let text = "\
brokers:
  - {name: mosquitto, host: h, port: 1}
  - {name: emqx, host: h, port: 2}
  - {name: rabbitmq, host: h, port: 3}
  - {name: vernemq, host: h, port: 4}
  - {name: hivemq, host: h, port: 5}
scenarios: [local, optimal, worst]
tests:
  - {name: offset, kind: offset}
  - {name: p1k, kind: payload, payload_size: 1024}
  - {name: p10k, kind: payload, payload_size: 10240}
  - {name: p1m, kind: payload, payload_size: 1048576}
";
        let plan = parse_plan(text).unwrap();
        assert_eq!(plan.cell_count(), 60);
    }

    #[test]
    fn load_plan_reports_missing_files() {
        match load_plan(Path::new("/nonexistent/benchkit.yml")) {
            Err(PlanError::Io { path, .. }) => {
                assert_eq!(path, PathBuf::from("/nonexistent/benchkit.yml"));
            }
            other => panic!("expected Io error, got {other:?}"),
        }
    }

    #[test]
    fn plan_round_trips_through_serde() {
        let plan = parse_plan(MINIMAL).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        let back: TestPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }
}
