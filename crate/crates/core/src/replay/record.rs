//! Replay log CSV.
//!
//! ```text
//! # n_streams=1
//! # pacing=full
//! stream_id,pid,tid,op,bytes,scheduled_start_ns,actual_start_ns,latency_ns,wall_epoch_ns
//! 0,100,1,open,0,0,41233,18020,1760000000000041233
//! # error 0,7,write,No space left on device (os error 28)
//! ```
//!
//! Times other than `wall_epoch_ns` are relative to the run start.
//! `wall_epoch_ns` is the op's actual start on the Unix epoch.

use std::io::{self, BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::trace::OpKind;

pub const LOG_COLUMNS: [&str; 9] = [
    "stream_id",
    "pid",
    "tid",
    "op",
    "bytes",
    "scheduled_start_ns",
    "actual_start_ns",
    "latency_ns",
    "wall_epoch_ns",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogEntry {
    pub stream_id: u32,
    pub pid: u32,
    pub tid: u32,
    pub op: OpKind,
    pub bytes: u64,
    pub scheduled_start_ns: u64,
    pub actual_start_ns: u64,
    pub latency_ns: u64,
    pub wall_epoch_ns: u64,
}

impl LogEntry {
    pub fn end_ns(&self) -> u64 {
        self.actual_start_ns + self.latency_ns
    }
}

/// An op that failed against the target and was skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpFailure {
    pub stream_id: u32,
    /// Event index within its stream.
    pub index: usize,
    pub op: OpKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayLog {
    pub config: Vec<(String, String)>,
    pub entries: Vec<LogEntry>,
    pub errors: Vec<OpFailure>,
}

impl ReplayLog {
    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Entries of one thread, in log order.
    pub fn thread(&self, stream_id: u32, pid: u32, tid: u32) -> impl Iterator<Item = &LogEntry> {
        self.entries
            .iter()
            .filter(move |e| e.stream_id == stream_id && e.pid == pid && e.tid == tid)
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_log<W: Write>(log: &ReplayLog, mut out: W) -> io::Result<()> {
    for (k, v) in &log.config {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "{}", LOG_COLUMNS.join(","))?;
    for e in &log.entries {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.stream_id,
            e.pid,
            e.tid,
            e.op,
            e.bytes,
            e.scheduled_start_ns,
            e.actual_start_ns,
            e.latency_ns,
            e.wall_epoch_ns
        )?;
    }
    for f in &log.errors {
        let msg = f.message.replace(['\n', '\r'], " ");
        writeln!(out, "# error {},{},{},{}", f.stream_id, f.index, f.op, msg)?;
    }
    out.flush()
}

pub fn read_log(path: &Path) -> Result<ReplayLog, LogError> {
    parse_log(io::BufReader::new(std::fs::File::open(path)?))
}

pub fn parse_log<R: BufRead>(input: R) -> Result<ReplayLog, LogError> {
    let mut log = ReplayLog::default();
    let mut header = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let bad = |reason: String| LogError::Malformed { line: n, reason };
        if line.trim().is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            let c = c.trim_start();
            if let Some(err) = c.strip_prefix("error ") {
                log.errors
                    .push(parse_failure(err).ok_or_else(|| bad("bad error record".into()))?);
            } else if let Some((k, v)) = c.split_once('=') {
                log.config.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if !header {
            if line.trim() != LOG_COLUMNS.join(",") {
                return Err(bad("expected the replay log column header".into()));
            }
            header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != LOG_COLUMNS.len() {
            return Err(bad(format!("expected {} fields, found {}", LOG_COLUMNS.len(), f.len())));
        }
        let int = |i: usize| -> Result<u64, LogError> {
            f[i].parse()
                .map_err(|_| bad(format!("{}: `{}` is not an integer", LOG_COLUMNS[i], f[i])))
        };
        let small = |i: usize| -> Result<u32, LogError> {
            u32::try_from(int(i)?).map_err(|_| bad(format!("{} out of range", LOG_COLUMNS[i])))
        };
        log.entries.push(LogEntry {
            stream_id: small(0)?,
            pid: small(1)?,
            tid: small(2)?,
            op: f[3].parse().map_err(|e| bad(format!("{e}")))?,
            bytes: int(4)?,
            scheduled_start_ns: int(5)?,
            actual_start_ns: int(6)?,
            latency_ns: int(7)?,
            wall_epoch_ns: int(8)?,
        });
    }
    if !header {
        return Err(LogError::Malformed {
            line: 1,
            reason: "missing replay log column header".into(),
        });
    }
    Ok(log)
}

fn parse_failure(s: &str) -> Option<OpFailure> {
    let mut it = s.splitn(4, ',');
    Some(OpFailure {
        stream_id: it.next()?.parse().ok()?,
        index: it.next()?.parse().ok()?,
        op: it.next()?.parse().ok()?,
        message: it.next().unwrap_or("").to_string(),
    })
}
