//! Test scheduler: runs the broker x scenario x test matrix.
//!
//! Cells run strictly one at a time so they never contend for CPU or
//! network; inside a cell, repetitions run sequentially and each repetition
//! stands up its own impairment proxy, one subscriber and
//! `publisher_threads` concurrent publishers. The subscriber is always
//! subscribed (SUBACK in hand) before the first publisher connects.
//!
//! Results are written incrementally: each repetition lands as
//! `rep<k>.csv` before the next starts, and `summary.json` is checkpointed
//! after every cell. A rerun skips repetitions whose record file already
//! exists, leaving prior outputs byte-identical, so an interrupted matrix
//! can simply be started again.
//!
//! Determinism: every repetition derives its seed from the plan seed and
//! the cell labels, sessions connect in a fixed order, and keep-alive is
//! disabled during measurement, so a fixed seed reproduces the exact same
//! proxy decision stream (chunk counts, delays, penalties) run after run.

use std::collections::HashSet;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::client::{ClientConfig, Session};
use crate::clock;
use crate::payload::{self, PayloadError};
use crate::plan::{BrokerEndpoint, TestKind, TestPlan, TestSpec, MAX_PAYLOAD_BYTES, MIN_PAYLOAD_BYTES};
use crate::proxy::{self, ProxyConfig};
use crate::report::{
    self, cell_dir, rep_csv_path, CellStatus, CellSummary, CellTotals, LatencyRecord,
    RepSummary, ReportError, RunFilters, RunMetadata, RunSummary,
};
use crate::rt;
use crate::scenario::Scenario;
use crate::seed;
use crate::stats::summarize;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{0}")]
    Filter(String),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub summary_path: PathBuf,
    pub cells_run: usize,
    pub cells_failed: usize,
}

/// One timestamped step of a repetition, for ordering assertions and logs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunEvent {
    pub at_ns: u64,
    pub label: String,
}

/// Publisher `index` of `publishers` starts this long into the repetition,
/// spreading first publishes uniformly across one interval.
pub fn staggered_start(index: u32, publishers: u32, interval: Duration) -> Duration {
    interval * index / publishers
}

/// How long the collector keeps waiting after the last publish attempt.
pub fn drain_timeout(payload_bytes: usize) -> Duration {
    Duration::from_secs(10 + (payload_bytes / 1_000_000) as u64)
}

pub fn run_plan(
    plan: &TestPlan,
    filters: &RunFilters,
    progress: &mut dyn FnMut(&str),
) -> Result<RunOutcome, RunnerError> {
    let (brokers, scenarios) = apply_filters(plan, filters)?;
    let out = plan.output_dir.clone();
    std::fs::create_dir_all(&out)
        .map_err(|source| ReportError::Io { path: out.clone(), source })?;
    let prior = report::load_summary(&out).ok();

    let mut summary = RunSummary {
        seed: plan.seed,
        generated_unix_ns: clock::unix_ns(),
        metadata: RunMetadata::default(),
        loss_model: plan.loss.clone(),
        ack: plan.ack.clone(),
        filters: filters.clone(),
        cells: Vec::new(),
    };
    let mut cells_failed = 0;
    for broker in &brokers {
        for scenario in &scenarios {
            for test in &plan.tests {
                let cell = run_cell(plan, broker, scenario, test, prior.as_ref(), progress);
                if let CellStatus::Failed { error } = &cell.status {
                    cells_failed += 1;
                    progress(&format!(
                        "cell {}/{}/{} FAILED: {error}",
                        broker.name, scenario.name, test.name
                    ));
                }
                summary.cells.push(cell);
                summary.generated_unix_ns = clock::unix_ns();
                report::save_summary(&out, &summary)?;
            }
        }
    }
    report::export_summary_csv(&out, &summary)?;
    report::export_boxplots(&out, &summary)?;
    Ok(RunOutcome {
        summary_path: report::summary_json_path(&out),
        out_dir: out,
        cells_run: summary.cells.len(),
        cells_failed,
    })
}

fn apply_filters<'p>(
    plan: &'p TestPlan,
    filters: &RunFilters,
) -> Result<(Vec<&'p BrokerEndpoint>, Vec<&'p Scenario>), RunnerError> {
    let brokers = match &filters.brokers {
        None => plan.brokers.iter().collect(),
        Some(names) => {
            for name in names {
                if !plan.brokers.iter().any(|b| &b.name == name) {
                    return Err(RunnerError::Filter(format!(
                        "unknown broker {name:?} (plan has: {})",
                        plan.brokers.iter().map(|b| b.name.as_str()).collect::<Vec<_>>().join(", ")
                    )));
                }
            }
            plan.brokers.iter().filter(|b| names.contains(&b.name)).collect()
        }
    };
    let scenarios = match &filters.scenarios {
        None => plan.scenarios.iter().collect(),
        Some(names) => {
            for name in names {
                if !plan.scenarios.iter().any(|s| &s.name == name) {
                    return Err(RunnerError::Filter(format!(
                        "unknown scenario {name:?} (plan has: {})",
                        plan.scenarios.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", ")
                    )));
                }
            }
            plan.scenarios.iter().filter(|s| names.contains(&s.name)).collect()
        }
    };
    Ok((brokers, scenarios))
}

#[derive(Debug, Error)]
enum RepError {
    #[error("broker unreachable: {0}")]
    Unreachable(String),
    #[error("{0}")]
    Client(String),
    #[error("proxy: {0}")]
    Proxy(String),
    #[error("no messages delivered")]
    NoRecords,
}

#[derive(Debug, Clone, Copy)]
enum RepLabel {
    Warmup(u32),
    Recorded(u32),
}

impl RepLabel {
    fn topic_leaf(self) -> String {
        match self {
            // warmups get their own topic level so stale retransmissions
            // can never pollute a recorded repetition
            RepLabel::Warmup(w) => format!("warm{w}"),
            RepLabel::Recorded(k) => format!("rep{k}"),
        }
    }

    fn index(self) -> u32 {
        match self {
            RepLabel::Warmup(i) | RepLabel::Recorded(i) => i,
        }
    }
}

struct RepOutcome {
    records: Vec<LatencyRecord>,
    summary: RepSummary,
    // consumed by ordering tests; not persisted
    #[allow(dead_code)]
    events: Vec<RunEvent>,
}

fn run_cell(
    plan: &TestPlan,
    broker: &BrokerEndpoint,
    scenario: &Scenario,
    test: &TestSpec,
    prior: Option<&RunSummary>,
    progress: &mut dyn FnMut(&str),
) -> CellSummary {
    let dir = cell_dir(&plan.output_dir, &broker.name, &scenario.name, &test.name);
    let mut reps: Vec<RepSummary> = Vec::new();
    let mut samples: Vec<f64> = Vec::new();
    let mut totals = CellTotals::default();
    let mut failure: Option<String> = None;

    let size = test.payload_bytes();
    if !(MIN_PAYLOAD_BYTES..=MAX_PAYLOAD_BYTES).contains(&size) {
        failure = Some(format!("payload size {size} outside supported range"));
    }

    let upstream: Result<SocketAddr, String> = broker
        .address()
        .to_socket_addrs()
        .ok()
        .and_then(|mut it| it.next())
        .ok_or_else(|| format!("cannot resolve {}", broker.address()));

    let upstream = match (failure.is_none(), upstream) {
        (true, Ok(addr)) => Some(addr),
        (true, Err(e)) => {
            failure = Some(e);
            None
        }
        _ => None,
    };

    if let Some(upstream) = upstream {
        let missing_reps =
            (0..test.repetitions).any(|k| !rep_csv_path(&dir, k).is_file());
        if missing_reps {
            for w in 0..test.warmup_runs {
                let s = seed::derive(
                    plan.seed,
                    &[&broker.name, &scenario.name, &test.name, "warmup"],
                    u64::from(w),
                );
                progress(&format!(
                    "cell {}/{}/{} warmup {}",
                    broker.name, scenario.name, test.name, w
                ));
                if let Err(e) =
                    run_repetition(plan, upstream, broker, scenario, test, RepLabel::Warmup(w), s)
                {
                    failure = Some(format!("warmup {w}: {e}"));
                    break;
                }
            }
        }

        for k in 0..test.repetitions {
            if failure.is_some() {
                break;
            }
            let path = rep_csv_path(&dir, k);
            if path.is_file() {
                match reuse_repetition(prior, broker, scenario, test, k, &path) {
                    Ok((rep, rep_samples)) => {
                        add_totals(&mut totals, &rep);
                        samples.extend(rep_samples);
                        reps.push(rep);
                        progress(&format!(
                            "cell {}/{}/{} rep {k}: kept existing records",
                            broker.name, scenario.name, test.name
                        ));
                    }
                    Err(e) => failure = Some(format!("rep {k}: {e}")),
                }
                continue;
            }

            let rep_seed = seed::derive(
                plan.seed,
                &[&broker.name, &scenario.name, &test.name],
                u64::from(k),
            );
            let label = RepLabel::Recorded(k);
            let outcome = match run_repetition(plan, upstream, broker, scenario, test, label, rep_seed)
            {
                Err(RepError::Unreachable(first)) => {
                    progress(&format!(
                        "cell {}/{}/{} rep {k}: {first}, retrying once",
                        broker.name, scenario.name, test.name
                    ));
                    run_repetition(plan, upstream, broker, scenario, test, label, rep_seed)
                }
                other => other,
            };
            match outcome {
                Err(e) => failure = Some(format!("rep {k}: {e}")),
                Ok(out) => match report::write_records_csv(&path, &out.records) {
                    Err(e) => failure = Some(format!("rep {k}: {e}")),
                    Ok(()) => {
                        progress(&format!(
                            "cell {}/{}/{} rep {k}: n={} median={:.2}ms",
                            broker.name,
                            scenario.name,
                            test.name,
                            out.summary.stats.n,
                            out.summary.stats.median
                        ));
                        add_totals(&mut totals, &out.summary);
                        samples.extend(out.records.iter().map(|r| r.latency_ms()));
                        reps.push(out.summary);
                    }
                },
            }
        }
    }

    let status = match failure {
        Some(error) => CellStatus::Failed { error },
        None => CellStatus::Complete,
    };
    let pooled = match (&status, samples.is_empty()) {
        (CellStatus::Complete, false) => summarize(&samples).ok(),
        _ => None,
    };
    CellSummary {
        broker: broker.name.clone(),
        scenario: scenario.name.clone(),
        test: test.name.clone(),
        payload_bytes: size as u64,
        status,
        repetitions: reps,
        pooled,
        totals,
    }
}

fn add_totals(totals: &mut CellTotals, rep: &RepSummary) {
    totals.records += rep.stats.n as u64;
    totals.exclusions += rep.exclusions;
    totals.undelivered += rep.undelivered;
    totals.duplicates += rep.duplicates;
}

/// A repetition whose record file already exists is never re-run. Its
/// summary is taken from the prior run's summary.json when it matches,
/// otherwise rebuilt from the records (accounting tallies then read zero).
fn reuse_repetition(
    prior: Option<&RunSummary>,
    broker: &BrokerEndpoint,
    scenario: &Scenario,
    test: &TestSpec,
    k: u32,
    path: &std::path::Path,
) -> Result<(RepSummary, Vec<f64>), ReportError> {
    let records = report::read_records_csv(path)?;
    let samples: Vec<f64> = records.iter().map(|r| r.latency_ms()).collect();
    if let Some(prev) = prior.and_then(|s| {
        s.cells
            .iter()
            .find(|c| {
                c.broker == broker.name && c.scenario == scenario.name && c.test == test.name
            })
            .and_then(|c| c.repetitions.iter().find(|r| r.repetition == k))
    }) {
        if prev.stats.n == records.len() {
            return Ok((prev.clone(), samples));
        }
    }
    let stats = summarize(&samples)?;
    Ok((
        RepSummary {
            repetition: k,
            stats,
            exclusions: 0,
            undelivered: 0,
            duplicates: 0,
            expected: records.len() as u64,
            duration_ns: 0,
            started_unix_ns: 0,
            proxy: None,
        },
        samples,
    ))
}

fn run_repetition(
    plan: &TestPlan,
    upstream: SocketAddr,
    broker: &BrokerEndpoint,
    scenario: &Scenario,
    test: &TestSpec,
    label: RepLabel,
    rep_seed: u64,
) -> Result<RepOutcome, RepError> {
    let started_unix_ns = clock::unix_ns();
    let rep_start_ns = clock::now_ns();
    let unix_base = started_unix_ns.saturating_sub(rep_start_ns);
    let mut events: Vec<RunEvent> = Vec::new();
    let mark = |events: &mut Vec<RunEvent>, label: String| {
        events.push(RunEvent { at_ns: clock::now_ns(), label });
    };

    let proxy = proxy::spawn(ProxyConfig {
        listen: plan.proxy_listen,
        upstream,
        scenario: scenario.clone(),
        loss: plan.loss.clone(),
        seed: rep_seed,
    })
    .map_err(|e| RepError::Proxy(e.to_string()))?;
    let proxy_addr = proxy.local_addr();
    mark(&mut events, "proxy-listening".into());

    // keep-alive off: measurement windows are short and PINGREQ traffic
    // would perturb the deterministic proxy chunk stream
    let session_config = |id: String| {
        let mut c = ClientConfig::new(id);
        c.keep_alive_s = 0;
        c.ack_timeout = Duration::from_millis(plan.ack.ack_timeout_ms);
        c.max_retransmits = plan.ack.max_retransmits;
        c
    };

    let mut subscriber = Session::connect(proxy_addr, session_config("bench-sub".into()))
        .map_err(|e| RepError::Unreachable(e.to_string()))?;
    mark(&mut events, "subscriber-connected".into());
    let root = format!(
        "bench/{}/{}/{}/{}",
        broker.name,
        scenario.name,
        test.name,
        label.topic_leaf()
    );
    subscriber
        .subscribe_qos1(&format!("{root}/#"))
        .map_err(|e| RepError::Client(format!("subscribe: {e}")))?;
    mark(&mut events, "suback".into());

    // connect order is part of the deterministic schedule: subscriber is
    // proxy connection 0, publisher i is connection i+1
    let mut sessions = Vec::with_capacity(test.publisher_threads as usize);
    for i in 0..test.publisher_threads {
        let session = Session::connect(proxy_addr, session_config(format!("bench-pub-{i:03}")))
            .map_err(|e| RepError::Unreachable(format!("publisher {i}: {e}")))?;
        sessions.push(session);
    }
    mark(&mut events, "publishers-connected".into());

    let expected = test.expected_messages();
    let interval = Duration::from_millis(test.publish_interval_ms);
    let interval_ns = test.publish_interval_ms * 1_000_000;
    let publishers = test.publisher_threads;
    let messages = test.messages_per_publisher;
    let size = test.payload_bytes();
    let kind = test.kind;
    // small runway so every thread reaches its first sleep before time zero
    let base_ns = clock::now_ns() + 50_000_000;

    let remaining = Arc::new(AtomicUsize::new(sessions.len()));
    let publish_failures = Arc::new(AtomicU64::new(0));
    let thread_events: Arc<Mutex<Vec<RunEvent>>> = Arc::new(Mutex::new(Vec::new()));
    let mut handles = Vec::with_capacity(sessions.len());
    for (i, mut session) in sessions.into_iter().enumerate() {
        let topic = format!("{root}/p{i:03}");
        let stagger_ns = staggered_start(i as u32, publishers, interval).as_nanos() as u64;
        let my_remaining = Arc::clone(&remaining);
        let failures = Arc::clone(&publish_failures);
        let thread_events = Arc::clone(&thread_events);
        let spawned = rt::spawn(&format!("pub-{i:03}"), move || {
            for m in 0..messages {
                clock::sleep_until_ns(base_ns + stagger_ns + u64::from(m) * interval_ns);
                if m == 0 {
                    thread_events.lock().unwrap().push(RunEvent {
                        at_ns: clock::now_ns(),
                        label: format!("first-publish p{i:03}"),
                    });
                }
                let body = match kind {
                    TestKind::Offset => payload::make_offset_payload(m),
                    TestKind::Payload => payload::make_bench_payload(size, m)
                        .expect("payload size validated at cell start"),
                };
                if session.publish_qos1(&topic, body).is_err() {
                    failures.fetch_add(1, Ordering::SeqCst);
                }
            }
            let _ = session.disconnect();
            my_remaining.fetch_sub(1, Ordering::SeqCst);
        });
        match spawned {
            Ok(handle) => handles.push(handle),
            Err(_) => {
                // the unspawned publisher's messages count as failures
                publish_failures.fetch_add(u64::from(messages), Ordering::SeqCst);
                remaining.fetch_sub(1, Ordering::SeqCst);
            }
        }
    }

    // collector: single consumer of the subscriber session
    let mut seen: HashSet<(String, u32)> = HashSet::new();
    let mut records: Vec<LatencyRecord> = Vec::new();
    let mut keyed_exclusions = 0u64;
    let mut keyless_exclusions = 0u64;
    let mut duplicates = 0u64;
    let drain_ns = drain_timeout(size).as_nanos() as u64;
    let mut publishers_done_at: Option<u64> = None;
    let collect_error = loop {
        if publishers_done_at.is_none() && remaining.load(Ordering::SeqCst) == 0 {
            publishers_done_at = Some(clock::now_ns());
        }
        if let Some(done_ns) = publishers_done_at {
            // holding until publishers finish keeps late duplicate
            // deliveries (DUP retransmissions) inside the dedup window
            if seen.len() as u64 >= expected {
                break None;
            }
            if clock::now_ns() >= done_ns + drain_ns {
                break None; // drain timeout: partial results retained
            }
        }
        let inbound = match subscriber.poll_publish(Duration::from_millis(100)) {
            Ok(Some(p)) => p,
            Ok(None) => continue,
            Err(e) => break Some(format!("subscriber: {e}")),
        };
        let Some(publisher) = inbound
            .topic
            .strip_prefix(root.as_str())
            .and_then(|rest| rest.strip_prefix('/'))
        else {
            keyless_exclusions += 1;
            continue;
        };
        match payload::extract_latency(&inbound.payload, inbound.received_ns) {
            Ok(x) => {
                if seen.insert((publisher.to_string(), x.sequence)) {
                    records.push(LatencyRecord {
                        broker: broker.name.clone(),
                        scenario: scenario.name.clone(),
                        test: test.name.clone(),
                        repetition: label.index(),
                        publisher: publisher.to_string(),
                        sequence: x.sequence,
                        latency_ns: x.latency_ns,
                        payload_bytes: inbound.payload.len() as u64,
                        received_at_unix_ns: unix_base + inbound.received_ns,
                    });
                } else {
                    duplicates += 1;
                }
            }
            // header intact but the sample is unusable: excluded, still keyed
            Err(PayloadError::ReceivedBeforeSent | PayloadError::ZeroTimestamp) => {
                let seq = u32::from_be_bytes(inbound.payload[12..16].try_into().unwrap());
                if seen.insert((publisher.to_string(), seq)) {
                    keyed_exclusions += 1;
                } else {
                    duplicates += 1;
                }
            }
            Err(_) => keyless_exclusions += 1,
        }
    };

    for handle in handles {
        let _ = handle.join();
    }
    let _ = subscriber.disconnect();
    let snapshot = proxy.shutdown();
    mark(&mut events, "collector-done".into());
    events.append(&mut thread_events.lock().unwrap());
    events.sort_by_key(|e| e.at_ns);

    if let Some(e) = collect_error {
        return Err(RepError::Client(e));
    }
    if records.is_empty() {
        return Err(RepError::NoRecords);
    }

    let exclusions = keyed_exclusions + keyless_exclusions;
    let undelivered = expected.saturating_sub(records.len() as u64 + exclusions);
    let samples: Vec<f64> = records.iter().map(|r| r.latency_ms()).collect();
    let stats = summarize(&samples).expect("records are non-empty and finite");
    Ok(RepOutcome {
        summary: RepSummary {
            repetition: label.index(),
            stats,
            exclusions,
            undelivered,
            duplicates,
            expected,
            duration_ns: clock::now_ns().saturating_sub(rep_start_ns),
            started_unix_ns,
            proxy: Some(snapshot),
        },
        records,
        events,
    })
}
