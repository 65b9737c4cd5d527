//! Result files and rendering.
//!
//! A run leaves a directory tree behind:
//!
//! ```text
//! <out>/<broker>/<scenario>/<test>/rep<k>.csv   raw per-repetition records
//! <out>/summary.json                            full machine-readable summary
//! <out>/summary.csv                             per-repetition and pooled stats
//! <out>/boxplot/<broker>__<scenario>__<test>.json
//! ```
//!
//! Record CSVs are the source of truth: everything else can be rebuilt from
//! them. All file writes go through a tmp-and-rename step so an interrupted
//! run never leaves a half-written file that a resume would trust.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock;
use crate::plan::AckPolicy;
use crate::proxy::ProxySnapshot;
use crate::scenario::LossModel;
use crate::stats::{render_median_iqr, summarize, StatsError, SummaryStats};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {problem}")]
    Csv {
        path: PathBuf,
        line: usize,
        problem: String,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("no results found in {}", .0.display())]
    NoResults(PathBuf),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// One measured publish-to-subscribe sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub broker: String,
    pub scenario: String,
    pub test: String,
    pub repetition: u32,
    pub publisher: String,
    pub sequence: u32,
    pub latency_ns: u64,
    pub payload_bytes: u64,
    pub received_at_unix_ns: u64,
}

impl LatencyRecord {
    pub fn latency_ms(&self) -> f64 {
        self.latency_ns as f64 / 1e6
    }
}

const RECORD_HEADER: &str =
    "broker,scenario,test,repetition,publisher,sequence,latency_ns,payload_bytes,received_at_unix_ns";

/// `<out>/<broker>/<scenario>/<test>`
pub fn cell_dir(out: &Path, broker: &str, scenario: &str, test: &str) -> PathBuf {
    out.join(broker).join(scenario).join(test)
}

pub fn rep_csv_path(cell: &Path, repetition: u32) -> PathBuf {
    cell.join(format!("rep{repetition}.csv"))
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let wrap = |source| ReportError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(wrap)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(wrap)?;
    std::fs::rename(&tmp, path).map_err(wrap)
}

pub fn write_records_csv(path: &Path, records: &[LatencyRecord]) -> Result<(), ReportError> {
    let mut text = String::with_capacity(64 * (records.len() + 1));
    text.push_str(RECORD_HEADER);
    text.push('\n');
    for r in records {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            r.broker,
            r.scenario,
            r.test,
            r.repetition,
            r.publisher,
            r.sequence,
            r.latency_ns,
            r.payload_bytes,
            r.received_at_unix_ns
        );
    }
    atomic_write(path, text.as_bytes())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<LatencyRecord>, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |line: usize, problem: String| ReportError::Csv {
        path: path.to_path_buf(),
        line,
        problem,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == RECORD_HEADER => {}
        Some((_, header)) => {
            return Err(bad(1, format!("unexpected header {header:?}")));
        }
        None => return Err(bad(1, "empty file".into())),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(bad(idx + 1, format!("expected 9 fields, got {}", fields.len())));
        }
        let num = |pos: usize| -> Result<u64, ReportError> {
            fields[pos]
                .parse::<u64>()
                .map_err(|e| bad(idx + 1, format!("field {}: {e}", pos + 1)))
        };
        records.push(LatencyRecord {
            broker: fields[0].to_string(),
            scenario: fields[1].to_string(),
            test: fields[2].to_string(),
            repetition: num(3)? as u32,
            publisher: fields[4].to_string(),
            sequence: num(5)? as u32,
            latency_ns: num(6)?,
            payload_bytes: num(7)?,
            received_at_unix_ns: num(8)?,
        });
    }
    Ok(records)
}

/// Which parts of the plan a run actually covered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFilters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brokers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<Vec<String>>,
}

impl RunFilters {
    pub fn is_full(&self) -> bool {
        self.brokers.is_none() && self.scenarios.is_none()
    }
}

/// Methodology notes shipped inside every summary so numbers are never
/// read without the decisions that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub source: String,
    pub units: String,
    pub quantile_method: String,
    pub publish_schedule: String,
    pub loss_approximation: String,
    pub pooling: String,
}

impl Default for RunMetadata {
    fn default() -> Self {
        RunMetadata {
            source: "run".into(),
            units: "milliseconds".into(),
            quantile_method: "linear interpolation between closest ranks".into(),
            publish_schedule: "publisher i of n starts i*interval/n into the repetition"
                .into(),
            loss_approximation:
                "loss is charged as a retransmission delay penalty per chunk, not as drops"
                    .into(),
            pooling: "repetitions pooled per cell; per-repetition stats retained".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Complete,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepSummary {
    pub repetition: u32,
    pub stats: SummaryStats,
    pub exclusions: u64,
    pub undelivered: u64,
    pub duplicates: u64,
    pub expected: u64,
    pub duration_ns: u64,
    pub started_unix_ns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<ProxySnapshot>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTotals {
    pub records: u64,
    pub exclusions: u64,
    pub undelivered: u64,
    pub duplicates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub broker: String,
    pub scenario: String,
    pub test: String,
    pub payload_bytes: u64,
    pub status: CellStatus,
    pub repetitions: Vec<RepSummary>,
    /// Stats over all repetitions' samples pooled into one distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled: Option<SummaryStats>,
    pub totals: CellTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub generated_unix_ns: u64,
    pub metadata: RunMetadata,
    pub loss_model: LossModel,
    pub ack: AckPolicy,
    #[serde(default)]
    pub filters: RunFilters,
    pub cells: Vec<CellSummary>,
}

pub fn summary_json_path(dir: &Path) -> PathBuf {
    dir.join("summary.json")
}

pub fn save_summary(dir: &Path, summary: &RunSummary) -> Result<(), ReportError> {
    let path = summary_json_path(dir);
    let mut bytes = serde_json::to_vec_pretty(summary)
        .map_err(|source| ReportError::Json { path: path.clone(), source })?;
    bytes.push(b'\n');
    atomic_write(&path, &bytes)
}

pub fn load_summary(dir: &Path) -> Result<RunSummary, ReportError> {
    let path = summary_json_path(dir);
    let text = std::fs::read_to_string(&path).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json { path, source })
}

/// Load a results directory: the saved summary when present, otherwise a
/// summary rebuilt from the record CSVs alone (accounting tallies are not
/// recoverable that way and read as zero).
pub fn load_results(dir: &Path) -> Result<RunSummary, ReportError> {
    if summary_json_path(dir).is_file() {
        return load_summary(dir);
    }
    match rebuild_from_csvs(dir)? {
        Some(summary) => Ok(summary),
        None => Err(ReportError::NoResults(dir.to_path_buf())),
    }
}

fn sorted_dirs(path: &Path) -> Vec<(String, PathBuf)> {
    let Ok(entries) = std::fs::read_dir(path) else { return Vec::new() };
    let mut out: Vec<(String, PathBuf)> = entries
        .flatten()
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok().map(|n| (n, e.path())))
        .collect();
    out.sort();
    out
}

fn rebuild_from_csvs(dir: &Path) -> Result<Option<RunSummary>, ReportError> {
    let mut cells = Vec::new();
    for (broker, broker_dir) in sorted_dirs(dir) {
        for (scenario, scenario_dir) in sorted_dirs(&broker_dir) {
            for (test, test_dir) in sorted_dirs(&scenario_dir) {
                let mut reps: Vec<(u32, PathBuf)> = Vec::new();
                let Ok(entries) = std::fs::read_dir(&test_dir) else { continue };
                for entry in entries.flatten() {
                    let name = entry.file_name().to_string_lossy().into_owned();
                    if let Some(k) = name
                        .strip_prefix("rep")
                        .and_then(|rest| rest.strip_suffix(".csv"))
                        .and_then(|k| k.parse::<u32>().ok())
                    {
                        reps.push((k, entry.path()));
                    }
                }
                if reps.is_empty() {
                    continue;
                }
                reps.sort();
                let mut rep_summaries = Vec::with_capacity(reps.len());
                let mut pooled_samples = Vec::new();
                let mut payload_bytes = 0;
                for (k, path) in reps {
                    let records = read_records_csv(&path)?;
                    if records.is_empty() {
                        continue;
                    }
                    payload_bytes = records[0].payload_bytes;
                    let samples: Vec<f64> = records.iter().map(|r| r.latency_ms()).collect();
                    let stats = summarize(&samples)?;
                    pooled_samples.extend(samples);
                    rep_summaries.push(RepSummary {
                        repetition: k,
                        stats,
                        exclusions: 0,
                        undelivered: 0,
                        duplicates: 0,
                        expected: records.len() as u64,
                        duration_ns: 0,
                        started_unix_ns: 0,
                        proxy: None,
                    });
                }
                if rep_summaries.is_empty() {
                    continue;
                }
                let records: u64 = rep_summaries.iter().map(|r| r.stats.n as u64).sum();
                cells.push(CellSummary {
                    broker: broker.clone(),
                    scenario: scenario.clone(),
                    test,
                    payload_bytes,
                    status: CellStatus::Complete,
                    pooled: Some(summarize(&pooled_samples)?),
                    repetitions: rep_summaries,
                    totals: CellTotals { records, ..CellTotals::default() },
                });
            }
        }
    }
    if cells.is_empty() {
        return Ok(None);
    }
    let metadata = RunMetadata {
        source: "rebuilt from record CSV files; accounting tallies unavailable".into(),
        ..RunMetadata::default()
    };
    Ok(Some(RunSummary {
        seed: 0,
        generated_unix_ns: clock::unix_ns(),
        metadata,
        loss_model: LossModel::default(),
        ack: AckPolicy::default(),
        filters: RunFilters::default(),
        cells,
    }))
}

const SUMMARY_CSV_HEADER: &str =
    "broker,scenario,test,repetition,n,min,q1,median,q3,max,iqr,mean,exclusions";

/// Per-repetition rows followed by one pooled row per cell.
pub fn summary_csv_text(summary: &RunSummary) -> String {
    let mut text = String::new();
    text.push_str(SUMMARY_CSV_HEADER);
    text.push('\n');
    let mut row = |broker: &str, scenario: &str, test: &str, rep: &str, s: &SummaryStats, excl: u64| {
        let _ = writeln!(
            text,
            "{broker},{scenario},{test},{rep},{},{},{},{},{},{},{},{},{excl}",
            s.n, s.min, s.q1, s.median, s.q3, s.max, s.iqr, s.mean
        );
    };
    for cell in &summary.cells {
        for rep in &cell.repetitions {
            row(
                &cell.broker,
                &cell.scenario,
                &cell.test,
                &rep.repetition.to_string(),
                &rep.stats,
                rep.exclusions,
            );
        }
        if let Some(pooled) = &cell.pooled {
            row(
                &cell.broker,
                &cell.scenario,
                &cell.test,
                "pooled",
                pooled,
                cell.totals.exclusions,
            );
        }
    }
    text
}

pub fn export_summary_csv(dir: &Path, summary: &RunSummary) -> Result<PathBuf, ReportError> {
    let path = dir.join("summary.csv");
    atomic_write(&path, summary_csv_text(summary).as_bytes())?;
    Ok(path)
}

/// Five-number summary plus the actual outlier values for one cell,
/// consumable by any plotting tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotData {
    pub broker: String,
    pub scenario: String,
    pub test: String,
    pub payload_bytes: u64,
    pub stats: SummaryStats,
    pub outliers: Vec<f64>,
}

/// Write one boxplot data file per complete cell, reading samples back from
/// the record CSVs. Returns the number of files written.
pub fn export_boxplots(dir: &Path, summary: &RunSummary) -> Result<usize, ReportError> {
    let plot_dir = dir.join("boxplot");
    let mut written = 0;
    for cell in &summary.cells {
        let mut samples = Vec::new();
        for rep in &cell.repetitions {
            let path = rep_csv_path(
                &cell_dir(dir, &cell.broker, &cell.scenario, &cell.test),
                rep.repetition,
            );
            if !path.is_file() {
                continue;
            }
            samples.extend(read_records_csv(&path)?.iter().map(|r| r.latency_ms()));
        }
        if samples.is_empty() {
            continue;
        }
        let stats = summarize(&samples)?;
        let outliers: Vec<f64> = samples
            .iter()
            .copied()
            .filter(|&v| v < stats.whisker_low || v > stats.whisker_high)
            .collect();
        let data = BoxplotData {
            broker: cell.broker.clone(),
            scenario: cell.scenario.clone(),
            test: cell.test.clone(),
            payload_bytes: cell.payload_bytes,
            stats,
            outliers,
        };
        let path = plot_dir.join(format!(
            "{}__{}__{}.json",
            cell.broker, cell.scenario, cell.test
        ));
        let mut bytes = serde_json::to_vec_pretty(&data)
            .map_err(|source| ReportError::Json { path: path.clone(), source })?;
        bytes.push(b'\n');
        atomic_write(&path, &bytes)?;
        written += 1;
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStyle {
    Plain,
    Markdown,
}

/// Render the median and IQR table: one row per test, one column per
/// broker and scenario pair, cells as "median - iqr" in milliseconds.
/// Cells without pooled stats render as "-" with a footnote.
pub fn render_median_iqr_table(summary: &RunSummary, style: TableStyle) -> String {
    // first-appearance order for rows and columns
    let mut tests: Vec<&str> = Vec::new();
    let mut columns: Vec<(&str, &str)> = Vec::new();
    let mut by_key: BTreeMap<(&str, &str, &str), &CellSummary> = BTreeMap::new();
    for cell in &summary.cells {
        if !tests.contains(&cell.test.as_str()) {
            tests.push(&cell.test);
        }
        let col = (cell.broker.as_str(), cell.scenario.as_str());
        if !columns.contains(&col) {
            columns.push(col);
        }
        by_key.insert((&cell.broker, &cell.scenario, &cell.test), cell);
    }

    let mut footnotes: Vec<String> = Vec::new();
    let mut grid: Vec<Vec<String>> = Vec::new();
    for &test in &tests {
        let mut row = Vec::with_capacity(columns.len());
        for &(broker, scenario) in &columns {
            let cell = by_key.get(&(broker, scenario, test));
            let text = match cell {
                Some(c) => match (&c.status, &c.pooled) {
                    (CellStatus::Complete, Some(p)) => render_median_iqr(p.median, p.iqr),
                    (CellStatus::Failed { error }, _) => {
                        footnotes.push(format!("{broker}/{scenario}/{test}: {error}"));
                        "-".to_string()
                    }
                    _ => "-".to_string(),
                },
                None => "-".to_string(),
            };
            row.push(text);
        }
        grid.push(row);
    }

    let mut out = String::new();
    match style {
        TableStyle::Markdown => {
            let _ = write!(out, "| test |");
            for (broker, scenario) in &columns {
                let _ = write!(out, " {broker} {scenario} |");
            }
            out.push('\n');
            let _ = write!(out, "|---|");
            for _ in &columns {
                let _ = write!(out, "---|");
            }
            out.push('\n');
            for (test, row) in tests.iter().zip(&grid) {
                let _ = write!(out, "| {test} |");
                for cell in row {
                    let _ = write!(out, " {cell} |");
                }
                out.push('\n');
            }
        }
        TableStyle::Plain => {
            let mut widths: Vec<usize> = columns
                .iter()
                .map(|(_, scenario)| scenario.len())
                .collect();
            for row in &grid {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.len());
                }
            }
            let label_width = tests
                .iter()
                .map(|t| t.len())
                .chain(["test".len()])
                .max()
                .unwrap_or(4);

            // broker group line: the broker name once, over its scenarios
            let _ = write!(out, "{:label_width$}", "");
            let mut i = 0;
            while i < columns.len() {
                let broker = columns[i].0;
                let mut group_width = 0;
                let mut j = i;
                while j < columns.len() && columns[j].0 == broker {
                    group_width += widths[j] + 2;
                    j += 1;
                }
                let _ = write!(out, "  {broker:<width$}", width = group_width.saturating_sub(2));
                i = j;
            }
            out.push('\n');
            let _ = write!(out, "{:<label_width$}", "test");
            for ((_, scenario), w) in columns.iter().zip(&widths) {
                let _ = write!(out, "  {scenario:<w$}");
            }
            out.push('\n');
            for (test, row) in tests.iter().zip(&grid) {
                let _ = write!(out, "{test:<label_width$}");
                for (cell, w) in row.iter().zip(&widths) {
                    let _ = write!(out, "  {cell:<w$}");
                }
                out.push('\n');
            }
        }
    }
    if !footnotes.is_empty() {
        out.push('\n');
        for note in footnotes {
            let _ = writeln!(out, "  - failed: {note}");
        }
    }
    out
}
