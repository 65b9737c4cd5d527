//! Benchmarking harness for MQTT 3.1.1 brokers.
//!
//! The crate measures publish-to-receive latency of a broker under emulated
//! network conditions. A fleet of publisher sessions sends timestamped
//! payloads through an impairing TCP proxy to the broker under test; a single
//! subscriber receives the fan-out, recovers the send timestamp, and the
//! harness reports per-cell median/IQR statistics over repeated runs.
//!
//! The pieces compose as libraries and each has a runnable example:
//!
//! * [`codec`] - MQTT 3.1.1 wire encoding and incremental decoding.
//! * [`client`] - blocking publisher/subscriber sessions (QoS 0/1).
//! * [`stub`] - an in-process broker stub with a fault plan, for tests and
//!   for benchmarking the harness against a known-trivial broker.
//! * [`proxy`] - a TCP relay that injects latency, jitter, and a loss-derived
//!   delay penalty per direction, deterministically under a seed.
//! * [`plan`] / [`runner`] - config-driven experiment matrix execution.
//! * [`stats`] / [`report`] - quantile statistics, tables, and exports.
//!
//! The `benchkit` binary wraps the same APIs behind `run`, `proxy`, `stub`,
//! `scenarios`, and `report` subcommands.

pub mod cli;
pub mod client;
pub mod clock;
pub mod codec;
pub mod payload;
pub mod plan;
pub mod proxy;
pub mod report;
mod rt;
pub mod runner;
pub mod scenario;
pub mod seed;
pub mod stats;
pub mod stub;

pub use client::{ClientConfig, Session};
pub use codec::{ControlPacket, QoS};
pub use plan::{BrokerEndpoint, TestPlan, TestSpec};
pub use proxy::{ProxyConfig, ProxySnapshot};
pub use report::{LatencyRecord, RunSummary};
pub use runner::{run_plan, RunOutcome};
pub use scenario::{LossModel, Scenario};
pub use stats::{summarize, SummaryStats};
pub use stub::{FaultPlan, StubConfig};
