//! Replays IO streams against a real directory tree.
//!
//! Every recorded `(stream, pid, tid)` gets one worker thread that issues the
//! thread's ops in trace order. Workers do not coordinate with each other; the
//! only thing they share is the cancellation flag. Per-worker logs are merged
//! once all workers have finished.
//!
//! Timing: a thread's first op is scheduled at
//! `start_offset + (t_start - stream_first_t_start)`, measured from the run
//! start. Every later op is scheduled one think-time gap after the previous op
//! of the same thread completed.

mod record;
mod tree;
mod worker;

use std::collections::HashSet;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::trace::{self, IoStream, OpKind, PositionError};

pub use self::record::{parse_log, read_log, write_log, LogEntry, LogError, OpFailure, ReplayLog, LOG_COLUMNS};
pub use self::tree::{prepare_tree, target_path, FilePopulation};

/// Default bound on `actual_start[i+1] - actual_start[i]` undershooting a gap.
pub const DEFAULT_TOLERANCE_NS: u64 = 2_000_000;
pub const DEFAULT_MAX_WORKERS: usize = 256;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("not enough space under the target root: {0}")]
    InsufficientSpace(#[source] io::Error),
    #[error("permission denied: {path}")]
    PermissionDenied {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot map trace path `{0}` under the target root")]
    InvalidPath(String),
    #[error("invalid replay plan: {0}")]
    InvalidPlan(String),
    #[error("{workers} workers needed, cap is {cap}")]
    TooManyWorkers { workers: usize, cap: usize },
    #[error("stream {stream_id}: {source}")]
    Position {
        stream_id: u32,
        #[source]
        source: PositionError,
    },
    #[error("stream {stream_id}, event {index} ({op}): {source}")]
    TargetIoError {
        stream_id: u32,
        index: usize,
        op: OpKind,
        #[source]
        source: io::Error,
    },
    #[error("monotonic clock went backwards")]
    ClockSkew,
    #[error("replay cancelled")]
    Cancelled,
    #[error("i/o error preparing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl ReplayError {
    pub(crate) fn from_io(path: &Path, e: io::Error) -> ReplayError {
        match e.kind() {
            io::ErrorKind::StorageFull => ReplayError::InsufficientSpace(e),
            io::ErrorKind::PermissionDenied => ReplayError::PermissionDenied {
                path: path.to_path_buf(),
                source: e,
            },
            _ => ReplayError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// Wait the recorded think time.
    Full,
    /// Wait the recorded think time multiplied by the factor.
    Scaled(f64),
    /// Never wait, start offsets included.
    Fast,
}

impl Pacing {
    fn scale(&self, ns: u64) -> u64 {
        match *self {
            Pacing::Full => ns,
            Pacing::Scaled(f) => (ns as f64 * f).round() as u64,
            Pacing::Fast => 0,
        }
    }
}

impl fmt::Display for Pacing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pacing::Full => f.write_str("full"),
            Pacing::Scaled(x) => write!(f, "scale:{x}"),
            Pacing::Fast => f.write_str("fast"),
        }
    }
}

impl FromStr for Pacing {
    type Err = ReplayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Pacing::Full),
            "fast" => Ok(Pacing::Fast),
            _ => {
                let bad = || ReplayError::InvalidPlan(format!("bad pacing `{s}` (full|scale:<f>|fast)"));
                let f: f64 = s.strip_prefix("scale:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if f.is_finite() && f >= 0.0 {
                    Ok(Pacing::Scaled(f))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

/// Shared stop flag, checked by workers between ops and while waiting.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct ReplayPlan {
    /// Streams with their start offsets in ns. Stream ids must be distinct.
    pub streams: Vec<(IoStream, u64)>,
    pub target_root: PathBuf,
    /// Open files with `O_SYNC`.
    pub sync_writes: bool,
    pub pacing: Pacing,
    /// Seeds the dummy file contents.
    pub seed: u64,
    /// Stop at the first failed op instead of recording it.
    pub strict: bool,
    pub max_workers: usize,
    pub tolerance_ns: u64,
    /// Replay only the threads of this `(stream_id, pid)`.
    pub only: Option<(u32, u32)>,
    /// Wall-clock instant the run starts at. Lets several processes share one
    /// time base; `None` starts immediately.
    pub start_at: Option<SystemTime>,
}

impl ReplayPlan {
    pub fn new(target_root: impl Into<PathBuf>) -> Self {
        ReplayPlan {
            streams: Vec::new(),
            target_root: target_root.into(),
            sync_writes: false,
            pacing: Pacing::Full,
            seed: 0,
            strict: false,
            max_workers: DEFAULT_MAX_WORKERS,
            tolerance_ns: DEFAULT_TOLERANCE_NS,
            only: None,
            start_at: None,
        }
    }

    pub fn stream(mut self, stream: IoStream, start_offset_ns: u64) -> Self {
        self.streams.push((stream, start_offset_ns));
        self
    }

    /// Key/value pairs echoed into the log header. Only settings that define
    /// the experiment go here, so repetitions compare equal.
    pub fn config_echo(&self) -> Vec<(String, String)> {
        let events: usize = self.streams.iter().map(|(s, _)| s.len()).sum();
        vec![
            ("n_streams".into(), self.streams.len().to_string()),
            ("events".into(), events.to_string()),
            ("pacing".into(), self.pacing.to_string()),
            ("sync_writes".into(), self.sync_writes.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    fn validate(&self) -> Result<(), ReplayError> {
        let mut ids = HashSet::new();
        for (s, _) in &self.streams {
            if !s.is_empty() && !ids.insert(s.stream_id()) {
                return Err(ReplayError::InvalidPlan(format!(
                    "stream id {} appears twice; relabel the streams",
                    s.stream_id()
                )));
            }
        }
        let workers = self.workers().count();
        if workers > self.max_workers {
            return Err(ReplayError::TooManyWorkers {
                workers,
                cap: self.max_workers,
            });
        }
        Ok(())
    }

    fn workers(&self) -> impl Iterator<Item = (usize, trace::ThreadKey)> + '_ {
        self.streams.iter().enumerate().flat_map(move |(si, (s, _))| {
            s.threads()
                .keys()
                .filter(move |k| self.only.is_none_or(|(sid, pid)| sid == s.stream_id() && pid == k.pid))
                .map(move |&k| (si, k))
        })
    }
}

/// Replays the plan. The tree must have been prepared.
pub fn replay(plan: &ReplayPlan) -> Result<ReplayLog, ReplayError> {
    replay_with_cancel(plan, &CancelToken::new())
}

pub fn replay_with_cancel(plan: &ReplayPlan, cancel: &CancelToken) -> Result<ReplayLog, ReplayError> {
    plan.validate()?;

    let mut positions = Vec::with_capacity(plan.streams.len());
    for (s, _) in &plan.streams {
        let p = trace::positions(s).map_err(|source| ReplayError::Position {
            stream_id: s.stream_id(),
            source,
        })?;
        positions.push(p);
    }

    let (t0, wall0) = time_base(plan.start_at);
    let failed: Arc<AtomicBool> = Arc::default();

    let results: Vec<worker::Outcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = plan
            .workers()
            .map(|(si, key)| {
                let job = worker::Job {
                    plan,
                    stream: &plan.streams[si].0,
                    offset: plan.streams[si].1,
                    positions: &positions[si],
                    key,
                    t0,
                    wall0,
                    cancel,
                    failed: &failed,
                };
                scope.spawn(move || worker::run(job))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replay worker panicked"))
            .collect()
    });

    let mut log = ReplayLog {
        config: plan.config_echo(),
        entries: Vec::new(),
        errors: Vec::new(),
    };
    let mut first_err = None;
    for out in results {
        log.entries.extend(out.entries);
        log.errors.extend(out.failures);
        if first_err.is_none() {
            first_err = out.error;
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    if cancel.is_cancelled() {
        return Err(ReplayError::Cancelled);
    }
    log.entries.sort_by_key(|e| e.actual_start_ns);
    Ok(log)
}

fn time_base(start_at: Option<SystemTime>) -> (Instant, u64) {
    let now_i = Instant::now();
    let now_w = SystemTime::now();
    let start_w = start_at.unwrap_or(now_w);
    let t0 = match start_w.duration_since(now_w) {
        Ok(ahead) => now_i + ahead,
        Err(behind) => now_i.checked_sub(behind.duration()).unwrap_or(now_i),
    };
    let wall0 = start_w.duration_since(UNIX_EPOCH).unwrap_or(Duration::ZERO).as_nanos() as u64;
    (t0, wall0)
}
