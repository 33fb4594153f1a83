//! Canonical trace model.
//!
//! A trace is a sequence of [`TraceEvent`]s belonging to one IO stream. Events
//! are kept sorted by start time and partitioned by the `(pid, tid)` of the
//! issuing thread. Construction goes through [`IoStream::from_events`], which
//! validates field presence, per-thread time ordering and descriptor liveness.
//! In [`Mode::Repair`] (the default) two classes of capture artefacts are fixed
//! up instead of rejected:
//!
//! - an event whose descriptor has no live `open` gets a zero-length `open` of
//!   `orphan-<fd>` synthesized right before it;
//! - an event that starts before the previous event of its thread ended has its
//!   start clamped to that end.
//!
//! File positions are not recorded for reads and writes. They are implicit
//! state: `open` starts at 0, `lseek` sets an absolute position, and reads and
//! writes advance it by their byte count (see [`positions`]).

mod analysis;
mod format;
mod position;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use analysis::{characterize, derive_think_times, KindStats, ThinkTimeProfile, WorkloadProfile};
pub use format::{parse_str, parse_trace, serialize_to_string, serialize_trace, TRACE_HEADER};
pub use position::{file_extents, positions, PositionError};

/// Kind of a recorded IO operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Open,
    Close,
    Read,
    Write,
    Lseek,
    /// Metadata operation on an open descriptor. Counted, replayed as `fstat`.
    Meta,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Open,
        OpKind::Close,
        OpKind::Read,
        OpKind::Write,
        OpKind::Lseek,
        OpKind::Meta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Open => "open",
            OpKind::Close => "close",
            OpKind::Read => "read",
            OpKind::Write => "write",
            OpKind::Lseek => "lseek",
            OpKind::Meta => "meta",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }

    /// True for the kinds that move payload bytes.
    pub fn is_data(self) -> bool {
        matches!(self, OpKind::Read | OpKind::Write)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown op kind `{0}`")]
pub struct UnknownOp(pub String);

impl FromStr for OpKind {
    type Err = UnknownOp;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownOp(s.to_string()))
    }
}

/// Identity of a recorded thread inside one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ThreadKey {
    pub pid: u32,
    pub tid: u32,
}

impl fmt::Display for ThreadKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.pid, self.tid)
    }
}

/// One recorded IO operation. Timestamps are nanoseconds since the trace epoch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub stream_id: u32,
    pub pid: u32,
    pub tid: u32,
    pub op: OpKind,
    /// Only for `open`.
    pub path: Option<String>,
    pub fd: u32,
    /// Only for `lseek`; absolute target position.
    pub offset: Option<u64>,
    /// Only for `read` and `write`.
    pub nbytes: Option<u64>,
    pub t_start: u64,
    pub t_end: u64,
}

impl TraceEvent {
    fn bare(op: OpKind, fd: u32) -> Self {
        TraceEvent {
            stream_id: 0,
            pid: 0,
            tid: 0,
            op,
            path: None,
            fd,
            offset: None,
            nbytes: None,
            t_start: 0,
            t_end: 0,
        }
    }

    pub fn open(fd: u32, path: impl Into<String>) -> Self {
        TraceEvent {
            path: Some(path.into()),
            ..Self::bare(OpKind::Open, fd)
        }
    }

    pub fn close(fd: u32) -> Self {
        Self::bare(OpKind::Close, fd)
    }

    pub fn read(fd: u32, nbytes: u64) -> Self {
        TraceEvent {
            nbytes: Some(nbytes),
            ..Self::bare(OpKind::Read, fd)
        }
    }

    pub fn write(fd: u32, nbytes: u64) -> Self {
        TraceEvent {
            nbytes: Some(nbytes),
            ..Self::bare(OpKind::Write, fd)
        }
    }

    pub fn lseek(fd: u32, offset: u64) -> Self {
        TraceEvent {
            offset: Some(offset),
            ..Self::bare(OpKind::Lseek, fd)
        }
    }

    pub fn meta(fd: u32) -> Self {
        Self::bare(OpKind::Meta, fd)
    }

    pub fn stream(mut self, stream_id: u32) -> Self {
        self.stream_id = stream_id;
        self
    }

    pub fn thread(mut self, pid: u32, tid: u32) -> Self {
        self.pid = pid;
        self.tid = tid;
        self
    }

    pub fn at(mut self, t_start: u64, t_end: u64) -> Self {
        self.t_start = t_start;
        self.t_end = t_end;
        self
    }

    pub fn thread_key(&self) -> ThreadKey {
        ThreadKey {
            pid: self.pid,
            tid: self.tid,
        }
    }

    pub fn response_time(&self) -> u64 {
        self.t_end - self.t_start
    }

    /// Payload bytes, zero for non-data ops.
    pub fn bytes(&self) -> u64 {
        self.nbytes.unwrap_or(0)
    }

    /// Name of the first field whose presence does not match the op kind.
    fn schema_violation(&self) -> Option<&'static str> {
        let wants_path = self.op == OpKind::Open;
        let wants_offset = self.op == OpKind::Lseek;
        let wants_nbytes = self.op.is_data();
        if self.path.is_some() != wants_path {
            return Some("path");
        }
        if let Some(p) = &self.path {
            if p.is_empty() || p.contains(['\n', '\r']) {
                return Some("path");
            }
        }
        if self.offset.is_some() != wants_offset {
            return Some("offset");
        }
        if self.nbytes.is_some() != wants_nbytes {
            return Some("nbytes");
        }
        if self.t_end < self.t_start {
            return Some("t_end");
        }
        None
    }
}

/// Whether capture artefacts are repaired or rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Repair,
    Strict,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: field `{field}` does not match the op kind")]
    SchemaViolation { line: usize, field: &'static str },
    #[error("thread {pid}/{tid}: event {index} overlaps its predecessor")]
    NonMonotoneThread { pid: u32, tid: u32, index: usize },
    #[error("trace is empty")]
    EmptyTrace,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An ordered, validated event sequence of one IO stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoStream {
    stream_id: u32,
    events: Vec<TraceEvent>,
    threads: BTreeMap<ThreadKey, Vec<usize>>,
    /// For every event, the index of the `open` that bound its descriptor.
    bindings: Vec<Option<usize>>,
}

impl IoStream {
    pub fn empty() -> Self {
        IoStream {
            stream_id: 0,
            events: Vec::new(),
            threads: BTreeMap::new(),
            bindings: Vec::new(),
        }
    }

    /// Builds a stream from events in input order. Errors report 1-based
    /// positions in `events`.
    pub fn from_events(events: Vec<TraceEvent>, mode: Mode) -> Result<Self, TraceError> {
        let numbered = events.into_iter().enumerate().map(|(i, e)| (i + 1, e)).collect();
        Self::build(numbered, mode)
    }

    /// Builds a stream from `(source_line, event)` pairs in input order.
    pub(crate) fn build(mut items: Vec<(usize, TraceEvent)>, mode: Mode) -> Result<Self, TraceError> {
        let Some(stream_id) = items.first().map(|(_, e)| e.stream_id) else {
            return Ok(Self::empty());
        };
        for (line, ev) in &items {
            if let Some(field) = ev.schema_violation() {
                return Err(TraceError::SchemaViolation { line: *line, field });
            }
            if ev.stream_id != stream_id {
                return Err(TraceError::SchemaViolation {
                    line: *line,
                    field: "stream_id",
                });
            }
        }

        items.sort_by_key(|(_, e)| e.t_start);

        let mut clamped = false;
        let mut last: HashMap<ThreadKey, (u64, usize)> = HashMap::new();
        for (_, ev) in items.iter_mut() {
            let key = ev.thread_key();
            let slot = last.entry(key).or_insert((0, 0));
            let (prev_end, count) = *slot;
            if count > 0 && ev.t_start < prev_end {
                if mode == Mode::Strict {
                    return Err(TraceError::NonMonotoneThread {
                        pid: key.pid,
                        tid: key.tid,
                        index: count,
                    });
                }
                ev.t_start = prev_end;
                ev.t_end = ev.t_end.max(prev_end);
                clamped = true;
            }
            *slot = (ev.t_end, count + 1);
        }
        if clamped {
            items.sort_by_key(|(_, e)| e.t_start);
        }

        let mut events = Vec::with_capacity(items.len());
        let mut bindings = Vec::with_capacity(items.len());
        let mut live: HashMap<(u32, u32), usize> = HashMap::new();
        for (line, ev) in items {
            let key = (ev.pid, ev.fd);
            if ev.op == OpKind::Open {
                live.insert(key, events.len());
                bindings.push(None);
                events.push(ev);
                continue;
            }
            let open_idx = match live.get(&key) {
                Some(&idx) => idx,
                None if mode == Mode::Strict => {
                    return Err(TraceError::SchemaViolation { line, field: "fd" });
                }
                None => {
                    let synth = TraceEvent::open(ev.fd, format!("orphan-{}", ev.fd))
                        .stream(ev.stream_id)
                        .thread(ev.pid, ev.tid)
                        .at(ev.t_start, ev.t_start);
                    let idx = events.len();
                    live.insert(key, idx);
                    bindings.push(None);
                    events.push(synth);
                    idx
                }
            };
            if ev.op == OpKind::Close {
                live.remove(&key);
            }
            bindings.push(Some(open_idx));
            events.push(ev);
        }

        let mut threads: BTreeMap<ThreadKey, Vec<usize>> = BTreeMap::new();
        for (i, ev) in events.iter().enumerate() {
            threads.entry(ev.thread_key()).or_default().push(i);
        }

        Ok(IoStream {
            stream_id,
            events,
            threads,
            bindings,
        })
    }

    pub fn stream_id(&self) -> u32 {
        self.stream_id
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Thread partitions, each listing event indices in trace order.
    pub fn threads(&self) -> &BTreeMap<ThreadKey, Vec<usize>> {
        &self.threads
    }

    pub fn thread_events(&self, key: ThreadKey) -> impl Iterator<Item = &TraceEvent> {
        self.threads
            .get(&key)
            .into_iter()
            .flatten()
            .map(move |&i| &self.events[i])
    }

    /// Index of the `open` event whose descriptor event `idx` uses.
    pub fn binding(&self, idx: usize) -> Option<usize> {
        self.bindings.get(idx).copied().flatten()
    }

    /// Path behind the descriptor used by event `idx`.
    pub fn path_of(&self, idx: usize) -> Option<&str> {
        let ev = self.events.get(idx)?;
        if ev.op == OpKind::Open {
            return ev.path.as_deref();
        }
        self.binding(idx).and_then(|o| self.events[o].path.as_deref())
    }

    /// Same events under another stream id.
    pub fn relabeled(&self, stream_id: u32) -> IoStream {
        let mut out = self.clone();
        out.stream_id = stream_id;
        for ev in &mut out.events {
            ev.stream_id = stream_id;
        }
        out
    }

    /// Number of distinct `(pid, tid)` threads.
    pub fn thread_count(&self) -> usize {
        self.threads.len()
    }
}
