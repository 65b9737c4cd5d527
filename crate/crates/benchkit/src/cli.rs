//! Command line entry point.
//!
//! Exit codes: 0 full success, 1 usage or config error, 2 when the run
//! finished but some cells failed. Thin dispatch only; behavior lives in
//! the library modules so everything here is reachable through the API too.

use std::ffi::OsString;
use std::io::Write as _;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::plan;
use crate::proxy::{self, ProxyConfig};
use crate::report::{self, ReportError, RunFilters, TableStyle};
use crate::runner;
use crate::scenario::{LossModel, Scenario};
use crate::stub::{self, FaultPlan, StubConfig};

#[derive(Parser)]
#[command(
    name = "benchkit",
    version,
    about = "MQTT 3.1.1 broker latency benchmarking harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the broker x scenario x test matrix from a plan config.
    Run(RunArgs),
    /// Relay TCP through scenario impairment, standalone.
    Proxy(ProxyArgs),
    /// Serve the in-process MQTT 3.1.1 stub broker, standalone.
    Stub(StubArgs),
    /// List scenario presets plus any scenarios a config defines.
    Scenarios(ScenariosArgs),
    /// Re-render stored results without re-running any tests.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Plan config file.
    #[arg(long, default_value = plan::DEFAULT_CONFIG_PATH)]
    config: PathBuf,
    /// Comma-separated broker names to run (default: every plan broker).
    #[arg(long, value_name = "broker[,broker]")]
    only: Option<String>,
    /// Single scenario to run (default: every plan scenario).
    #[arg(long)]
    scenario: Option<String>,
    /// Override the plan's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides BENCHKIT_OUT and the plan's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProxyArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:1884")]
    listen: SocketAddr,
    /// Broker address to relay to, host:port.
    #[arg(long)]
    upstream: String,
    /// Scenario preset name.
    #[arg(long, default_value = "local")]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StubArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:1883")]
    listen: SocketAddr,
    /// Fault injection, e.g. "drop_pubacks=2,connack=5,grant=128".
    #[arg(long)]
    faults: Option<String>,
}

#[derive(Args)]
struct ScenariosArgs {
    /// Plan config to read user-defined scenarios from
    /// (default: ./benchkit.yml when present).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Results directory of a previous run.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Table,
    Markdown,
    Csv,
    Json,
}

/// Parse and dispatch. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Proxy(args) => cmd_proxy(args),
        Command::Stub(args) => cmd_stub(args),
        Command::Scenarios(args) => cmd_scenarios(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_run(args: RunArgs) -> i32 {
    let mut plan = match plan::load_plan(&args.config) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    if let Some(out) = args.out {
        plan.output_dir = out;
    } else if let Some(out) = std::env::var_os("BENCHKIT_OUT") {
        plan.output_dir = PathBuf::from(out);
    }

    let brokers = match args.only.as_deref().map(split_names) {
        Some(list) if list.is_empty() => {
            eprintln!("error: --only requires at least one broker name");
            return 1;
        }
        other => other,
    };
    let filters = RunFilters {
        brokers,
        scenarios: args.scenario.map(|s| vec![s]),
    };

    let mut progress = |line: &str| eprintln!("{line}");
    match runner::run_plan(&plan, &filters, &mut progress) {
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
        Ok(outcome) => {
            match report::load_summary(&outcome.out_dir) {
                Ok(summary) => {
                    print!("{}", report::render_median_iqr_table(&summary, TableStyle::Plain));
                }
                Err(e) => eprintln!("warning: cannot render summary: {e}"),
            }
            println!("summary: {}", outcome.summary_path.display());
            if outcome.cells_failed > 0 {
                eprintln!("{} of {} cells failed", outcome.cells_failed, outcome.cells_run);
                2
            } else {
                0
            }
        }
    }
}

fn split_names(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect()
}

fn cmd_proxy(args: ProxyArgs) -> i32 {
    let Some(scenario) = Scenario::preset(&args.scenario) else {
        eprintln!(
            "error: unknown scenario {:?} (presets: local, optimal, worst)",
            args.scenario
        );
        return 1;
    };
    let upstream = match args.upstream.to_socket_addrs().ok().and_then(|mut a| a.next()) {
        Some(addr) => addr,
        None => {
            eprintln!("error: cannot resolve upstream {:?}", args.upstream);
            return 1;
        }
    };
    let name = scenario.name.clone();
    let handle = match proxy::spawn(ProxyConfig {
        listen: args.listen,
        upstream,
        scenario,
        loss: LossModel::default(),
        seed: args.seed,
    }) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    println!(
        "proxy listening on {} -> {upstream} (scenario {name}, seed {})",
        handle.local_addr(),
        args.seed
    );
    let _ = std::io::stdout().flush();
    park_forever(handle)
}

fn cmd_stub(args: StubArgs) -> i32 {
    let faults = match args.faults.as_deref().map(parse_faults).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let handle = match stub::spawn(StubConfig { listen: args.listen, faults }) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    println!("stub broker listening on {}", handle.local_addr());
    let _ = std::io::stdout().flush();
    park_forever(handle)
}

/// "drop_pubacks=N,connack=N,grant=N", any subset, empty allowed.
fn parse_faults(spec: &str) -> Result<FaultPlan, String> {
    let mut plan = FaultPlan::default();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("fault {part:?}: expected key=value"))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "drop_pubacks" => {
                plan.drop_first_n_pubacks =
                    value.parse().map_err(|e| format!("drop_pubacks: {e}"))?;
            }
            "connack" => {
                plan.connack_return_code =
                    value.parse().map_err(|e| format!("connack: {e}"))?;
            }
            "grant" => {
                plan.grant_qos_override =
                    Some(value.parse().map_err(|e| format!("grant: {e}"))?);
            }
            other => {
                return Err(format!(
                    "unknown fault key {other:?} (known: drop_pubacks, connack, grant)"
                ));
            }
        }
    }
    Ok(plan)
}

fn cmd_scenarios(args: ScenariosArgs) -> i32 {
    let mut rows = Scenario::presets();
    let config = args.config.or_else(|| {
        let default = PathBuf::from(plan::DEFAULT_CONFIG_PATH);
        default.is_file().then_some(default)
    });
    if let Some(path) = config {
        match plan::load_plan(&path) {
            Ok(plan) => {
                for s in plan.scenarios {
                    if !rows.iter().any(|r| r.name == s.name) {
                        rows.push(s);
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        }
    }
    println!("{:<12} {:>10} {:>9} {:>8}", "name", "latency_ms", "jitter_ms", "loss_pct");
    for s in rows {
        println!(
            "{:<12} {:>10} {:>9} {:>8}",
            s.name, s.latency_ms, s.jitter_ms, s.loss_pct
        );
    }
    0
}

fn cmd_report(args: ReportArgs) -> i32 {
    let summary = match report::load_results(&args.input) {
        Ok(s) => s,
        Err(e @ ReportError::NoResults(_)) => {
            eprintln!("error: {e}");
            return 1;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match args.format {
        ReportFormat::Table => {
            print!("{}", report::render_median_iqr_table(&summary, TableStyle::Plain));
        }
        ReportFormat::Markdown => {
            print!("{}", report::render_median_iqr_table(&summary, TableStyle::Markdown));
        }
        ReportFormat::Csv => print!("{}", report::summary_csv_text(&summary)),
        ReportFormat::Json => match serde_json::to_string_pretty(&summary) {
            Ok(text) => println!("{text}"),
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        },
    }
    0
}

/// Keep the guard alive and the process parked until it is killed.
fn park_forever<T>(_guard: T) -> i32 {
    loop {
        std::thread::park();
    }
}
