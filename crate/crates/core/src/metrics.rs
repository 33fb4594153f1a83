//! Run summaries, repetition statistics and report tables.
//!
//! Latencies are reported in seconds, throughput in bytes per second. Only
//! reads and writes count as accesses; open, close, lseek and meta entries
//! contribute to the wall duration but not to latency or throughput.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::replay::ReplayLog;
use crate::stats::{self, Estimator};
use crate::trace::OpKind;

const NS: f64 = 1e9;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("replay log has no entries")]
    EmptyLog,
    #[error("need at least 2 repetitions, got {0}")]
    TooFewReports(usize),
    #[error("repetition {index} was run with a different configuration")]
    MismatchedConfigs { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Tsv,
}

impl Format {
    fn sep(self) -> &'static str {
        match self {
            Format::Csv => ",",
            Format::Tsv => "\t",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            _ => Err(format!("unknown format `{s}` (csv|tsv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OpSummary {
    pub count: u64,
    pub bytes: u64,
    /// Absent when there were no ops of this type.
    pub mean_latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub read: OpSummary,
    pub write: OpSummary,
    /// Over all reads and writes.
    pub mean_latency_s: Option<f64>,
    pub wall_duration_ns: u64,
    pub n_streams: usize,
    pub config: Vec<(String, String)>,
}

/// Column names of [`RunReport::values`].
pub const RUN_COLUMNS: [&str; 9] = [
    "read_count",
    "read_bytes",
    "read_latency_s",
    "write_count",
    "write_bytes",
    "write_latency_s",
    "mean_latency_s",
    "throughput_bytes_per_s",
    "wall_duration_s",
];

impl RunReport {
    pub fn total_bytes(&self) -> u64 {
        self.read.bytes + self.write.bytes
    }

    pub fn wall_duration_s(&self) -> f64 {
        self.wall_duration_ns as f64 / NS
    }

    /// Total read+write bytes over the wall duration. Absent for a zero-length run.
    pub fn aggregate_throughput(&self) -> Option<f64> {
        (self.wall_duration_ns > 0).then(|| self.total_bytes() as f64 / self.wall_duration_s())
    }

    pub fn get(&self, op: OpKind) -> Option<&OpSummary> {
        match op {
            OpKind::Read => Some(&self.read),
            OpKind::Write => Some(&self.write),
            _ => None,
        }
    }

    pub fn values(&self) -> [Option<f64>; 9] {
        [
            Some(self.read.count as f64),
            Some(self.read.bytes as f64),
            self.read.mean_latency_s,
            Some(self.write.count as f64),
            Some(self.write.bytes as f64),
            self.write.mean_latency_s,
            self.mean_latency_s,
            self.aggregate_throughput(),
            Some(self.wall_duration_s()),
        ]
    }
}

pub fn summarize(log: &ReplayLog) -> Result<RunReport, MetricsError> {
    if log.entries.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let mut lat: [(u64, u64, u128); 2] = [(0, 0, 0); 2];
    let mut first = u64::MAX;
    let mut last = 0;
    let mut streams = std::collections::BTreeSet::new();
    for e in &log.entries {
        first = first.min(e.scheduled_start_ns).min(e.actual_start_ns);
        last = last.max(e.end_ns());
        streams.insert(e.stream_id);
        let slot = match e.op {
            OpKind::Read => 0,
            OpKind::Write => 1,
            _ => continue,
        };
        lat[slot].0 += 1;
        lat[slot].1 += e.bytes;
        lat[slot].2 += u128::from(e.latency_ns);
    }
    let summary = |(count, bytes, sum): (u64, u64, u128)| OpSummary {
        count,
        bytes,
        mean_latency_s: (count > 0).then(|| sum as f64 / count as f64 / NS),
    };
    let n = lat[0].0 + lat[1].0;
    Ok(RunReport {
        read: summary(lat[0]),
        write: summary(lat[1]),
        mean_latency_s: (n > 0).then(|| (lat[0].2 + lat[1].2) as f64 / n as f64 / NS),
        wall_duration_ns: last - first,
        n_streams: streams.len(),
        config: log.config.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricStats {
    pub mean: Option<f64>,
    pub stddev: Option<f64>,
    /// `stddev / mean`, absent when the mean is 0.
    pub normalized_stddev: Option<f64>,
}

impl MetricStats {
    /// Statistics over the values; absent if any value is absent.
    pub fn of(values: &[Option<f64>], estimator: Estimator) -> MetricStats {
        let Some(vs) = values.iter().copied().collect::<Option<Vec<f64>>>() else {
            return MetricStats::default();
        };
        let mean = stats::mean(&vs);
        let stddev = stats::stddev(&vs, estimator);
        let normalized_stddev = match (mean, stddev) {
            (Some(m), Some(s)) if m != 0.0 => Some(s / m.abs()),
            _ => None,
        };
        MetricStats {
            mean,
            stddev,
            normalized_stddev,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionStats {
    pub estimator: Estimator,
    pub repetitions: usize,
    pub config: Vec<(String, String)>,
    /// One entry per [`RUN_COLUMNS`] column.
    pub metrics: Vec<MetricStats>,
}

impl RepetitionStats {
    pub fn metric(&self, name: &str) -> Option<&MetricStats> {
        RUN_COLUMNS.iter().position(|c| *c == name).map(|i| &self.metrics[i])
    }
}

pub fn repetition_stats(reports: &[RunReport], estimator: Estimator) -> Result<RepetitionStats, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewReports(reports.len()));
    }
    if let Some(index) = reports.iter().position(|r| r.config != reports[0].config) {
        return Err(MetricsError::MismatchedConfigs { index });
    }
    let values: Vec<[Option<f64>; 9]> = reports.iter().map(RunReport::values).collect();
    let metrics = (0..RUN_COLUMNS.len())
        .map(|c| MetricStats::of(&values.iter().map(|v| v[c]).collect::<Vec<_>>(), estimator))
        .collect();
    Ok(RepetitionStats {
        estimator,
        repetitions: reports.len(),
        config: reports[0].config.clone(),
        metrics,
    })
}

/// Integers print as such; everything else with 17 significant digits.
fn cell(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(v) if v.fract() == 0.0 && v.abs() < 1e15 => format!("{}", v as i64),
        Some(v) => stats::format_float(v),
    }
}

fn write_config<W: Write>(out: &mut W, config: &[(String, String)]) -> io::Result<()> {
    for (k, v) in config {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

fn write_row<W: Write>(out: &mut W, format: Format, cells: &[String]) -> io::Result<()> {
    writeln!(out, "{}", cells.join(format.sep()))
}

/// One `metric,value` row per run metric.
pub fn emit_report<W: Write>(report: &RunReport, format: Format, mut out: W) -> io::Result<()> {
    write_config(&mut out, &report.config)?;
    write_row(&mut out, format, &["metric".into(), "value".into()])?;
    write_row(&mut out, format, &["n_streams".into(), report.n_streams.to_string()])?;
    for (name, v) in RUN_COLUMNS.iter().zip(report.values()) {
        write_row(&mut out, format, &[name.to_string(), cell(v)])?;
    }
    out.flush()
}

pub fn emit_stats<W: Write>(stats: &RepetitionStats, format: Format, mut out: W) -> io::Result<()> {
    write_config(&mut out, &stats.config)?;
    writeln!(out, "# estimator={}", stats.estimator)?;
    writeln!(out, "# repetitions={}", stats.repetitions)?;
    write_row(
        &mut out,
        format,
        &["metric", "mean", "stddev", "normalized_stddev"].map(String::from),
    )?;
    for (name, m) in RUN_COLUMNS.iter().zip(&stats.metrics) {
        write_row(
            &mut out,
            format,
            &[
                name.to_string(),
                cell(m.mean),
                cell(m.stddev),
                cell(m.normalized_stddev),
            ],
        )?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SweepKey {
    pub streams: usize,
    pub width: Option<u32>,
}

/// One run of a sweep cell, optionally with the simulated balance for the
/// same streams and width.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub key: SweepKey,
    pub report: Option<RunReport>,
    pub avg_sigma_read: Option<f64>,
    pub avg_sigma_write: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Run,
    Mean,
    Stddev,
    NormalizedStddev,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Run => "run",
            RowKind::Mean => "mean",
            RowKind::Stddev => "stddev",
            RowKind::NormalizedStddev => "normalized_stddev",
        }
    }
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kind: RowKind,
    pub key: SweepKey,
    pub rep: Option<usize>,
    /// [`RUN_COLUMNS`] followed by `avg_sigma_read`, `avg_sigma_write`.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub estimator: Estimator,
    pub rows: Vec<SweepRow>,
}

pub fn sweep_columns() -> Vec<&'static str> {
    let mut c = vec!["kind", "streams", "width", "rep"];
    c.extend(RUN_COLUMNS);
    c.extend(["avg_sigma_read", "avg_sigma_write"]);
    c
}

/// Groups runs by key (ordered by stream count, then width), numbers the
/// repetitions and appends mean/stddev/normalized rows for every key with at
/// least two runs.
pub fn sweep_table(runs: &[SweepRun], estimator: Estimator) -> Result<SweepTable, MetricsError> {
    let mut groups: BTreeMap<SweepKey, Vec<&SweepRun>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.key).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (key, group) in groups {
        let values: Vec<Vec<Option<f64>>> = group
            .iter()
            .map(|r| {
                let mut v: Vec<Option<f64>> = match &r.report {
                    Some(rep) => rep.values().to_vec(),
                    None => vec![None; RUN_COLUMNS.len()],
                };
                v.extend([r.avg_sigma_read, r.avg_sigma_write]);
                v
            })
            .collect();
        for (rep, v) in values.iter().enumerate() {
            rows.push(SweepRow {
                kind: RowKind::Run,
                key,
                rep: Some(rep),
                values: v.clone(),
            });
        }
        if group.len() < 2 {
            continue;
        }
        let first_cfg = group[0].report.as_ref().map(|r| &r.config);
        if let Some(index) = group
            .iter()
            .position(|r| r.report.as_ref().map(|r| &r.config) != first_cfg)
        {
            return Err(MetricsError::MismatchedConfigs { index });
        }
        let stats: Vec<MetricStats> = (0..values[0].len())
            .map(|c| MetricStats::of(&values.iter().map(|v| v[c]).collect::<Vec<_>>(), estimator))
            .collect();
        for (kind, pick) in [
            (
                RowKind::Mean,
                (|m: &MetricStats| m.mean) as fn(&MetricStats) -> Option<f64>,
            ),
            (RowKind::Stddev, |m| m.stddev),
            (RowKind::NormalizedStddev, |m| m.normalized_stddev),
        ] {
            rows.push(SweepRow {
                kind,
                key,
                rep: None,
                values: stats.iter().map(pick).collect(),
            });
        }
    }
    Ok(SweepTable { estimator, rows })
}

pub fn emit_sweep<W: Write>(table: &SweepTable, format: Format, mut out: W) -> io::Result<()> {
    writeln!(out, "# estimator={}", table.estimator)?;
    write_row(
        &mut out,
        format,
        &sweep_columns().into_iter().map(String::from).collect::<Vec<_>>(),
    )?;
    for r in &table.rows {
        let mut cells = vec![
            r.kind.to_string(),
            r.key.streams.to_string(),
            r.key.width.map(|w| w.to_string()).unwrap_or_default(),
            r.rep.map(|n| n.to_string()).unwrap_or_default(),
        ];
        cells.extend(r.values.iter().map(|&v| cell(v)));
        write_row(&mut out, format, &cells)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::LogEntry;

    fn entry(op: OpKind, bytes: u64, start_ms: u64, lat_ms: u64) -> LogEntry {
        LogEntry {
            stream_id: 0,
            pid: 1,
            tid: 1,
            op,
            bytes,
            scheduled_start_ns: start_ms * 1_000_000,
            actual_start_ns: start_ms * 1_000_000,
            latency_ns: lat_ms * 1_000_000,
            wall_epoch_ns: 0,
        }
    }

    fn log(entries: Vec<LogEntry>) -> ReplayLog {
        ReplayLog {
            entries,
            ..Default::default()
        }
    }

    fn with_write_latencies(lat: &[f64]) -> Vec<RunReport> {
        lat.iter()
            .map(|&l| RunReport {
                read: OpSummary::default(),
                write: OpSummary {
                    count: 1,
                    bytes: 1,
                    mean_latency_s: Some(l),
                },
                mean_latency_s: Some(l),
                wall_duration_ns: 1,
                n_streams: 1,
                config: vec![],
            })
            .collect()
    }

    #[test]
    fn two_read_mean() {
        let r = summarize(&log(vec![
            entry(OpKind::Read, 1, 0, 10),
            entry(OpKind::Read, 1, 20, 30),
        ]))
        .unwrap();
        assert!((r.read.mean_latency_s.unwrap() - 0.020).abs() < 1e-12);
    }

    #[test]
    fn throughput_over_window() {
        let mib = 1 << 20;
        let r = summarize(&log(vec![
            entry(OpKind::Write, mib, 0, 500),
            entry(OpKind::Write, mib, 500, 500),
            entry(OpKind::Write, mib, 1000, 500),
            entry(OpKind::Write, mib, 1500, 500),
        ]))
        .unwrap();
        assert_eq!(r.wall_duration_ns, 2_000_000_000);
        assert_eq!(r.aggregate_throughput(), Some(2.0 * mib as f64));
    }

    #[test]
    fn missing_op_type_is_absent() {
        let r = summarize(&log(vec![entry(OpKind::Read, 10, 0, 1)])).unwrap();
        assert_eq!(r.write.mean_latency_s, None);
        assert_eq!(r.write.count, 0);
        assert_eq!(summarize(&log(vec![])), Err(MetricsError::EmptyLog));
    }

    #[test]
    fn overall_mean_is_count_weighted() {
        let r = summarize(&log(vec![
            entry(OpKind::Read, 1, 0, 10),
            entry(OpKind::Write, 1, 10, 40),
            entry(OpKind::Write, 1, 60, 10),
            entry(OpKind::Lseek, 0, 80, 900),
        ]))
        .unwrap();
        let weighted = (r.read.mean_latency_s.unwrap() + 2.0 * r.write.mean_latency_s.unwrap()) / 3.0;
        assert!((r.mean_latency_s.unwrap() - weighted).abs() < 1e-15);
        assert!((r.mean_latency_s.unwrap() - 0.020).abs() < 1e-12);
    }

    #[test]
    fn repetition_examples() {
        let same = with_write_latencies(&[0.5, 0.5, 0.5]);
        let s = repetition_stats(&same, Estimator::Sample).unwrap();
        assert_eq!(s.metric("write_latency_s").unwrap().normalized_stddev, Some(0.0));

        let s = repetition_stats(&with_write_latencies(&[1.0, 1.0, 4.0]), Estimator::Population).unwrap();
        let m = s.metric("write_latency_s").unwrap();
        assert_eq!(m.mean, Some(2.0));
        assert!((m.stddev.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((m.normalized_stddev.unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);

        let col = with_write_latencies(&[0.063, 0.011, 0.020]);
        let sample = repetition_stats(&col, Estimator::Sample).unwrap();
        let pop = repetition_stats(&col, Estimator::Population).unwrap();
        let ns = |s: &RepetitionStats| s.metric("write_latency_s").unwrap().normalized_stddev.unwrap();
        assert!((ns(&sample) - 0.887).abs() < 1e-3, "{}", ns(&sample));
        assert!((ns(&pop) - 0.724).abs() < 1e-3, "{}", ns(&pop));
        // no read ops: absent, not zero
        assert_eq!(sample.metric("read_latency_s").unwrap().mean, None);
    }

    #[test]
    fn repetition_errors() {
        let mut r = with_write_latencies(&[1.0, 2.0]);
        assert_eq!(
            repetition_stats(&r[..1], Estimator::Sample),
            Err(MetricsError::TooFewReports(1))
        );
        r[1].config.push(("pacing".into(), "fast".into()));
        assert_eq!(
            repetition_stats(&r, Estimator::Sample),
            Err(MetricsError::MismatchedConfigs { index: 1 })
        );
    }

    #[test]
    fn zero_mean_has_no_normalized_value() {
        let m = MetricStats::of(&[Some(0.0), Some(0.0)], Estimator::Sample);
        assert_eq!(m.mean, Some(0.0));
        assert_eq!(m.normalized_stddev, None);
    }

    #[test]
    fn cells() {
        assert_eq!(cell(None), "");
        assert_eq!(cell(Some(42.0)), "42");
        assert_eq!(cell(Some(0.1)).parse::<f64>().unwrap(), 0.1);
    }
}
