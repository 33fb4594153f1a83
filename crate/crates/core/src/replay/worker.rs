use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{target_path, CancelToken, LogEntry, OpFailure, Pacing, ReplayError, ReplayPlan};
use crate::trace::{IoStream, OpKind, ThreadKey, TraceEvent};

const WAIT_SLICE: Duration = Duration::from_millis(20);

pub(super) struct Job<'a> {
    pub plan: &'a ReplayPlan,
    pub stream: &'a IoStream,
    pub offset: u64,
    pub positions: &'a [Option<u64>],
    pub key: ThreadKey,
    pub t0: Instant,
    pub wall0: u64,
    pub cancel: &'a CancelToken,
    pub failed: &'a AtomicBool,
}

#[derive(Default)]
pub(super) struct Outcome {
    pub entries: Vec<LogEntry>,
    pub failures: Vec<OpFailure>,
    pub error: Option<ReplayError>,
}

struct Handle {
    file: File,
    pos: u64,
}

struct Exec<'a> {
    job: &'a Job<'a>,
    /// Open instances by the event index of their open.
    handles: HashMap<usize, Handle>,
    buf: Vec<u8>,
    rng: ChaCha8Rng,
}

pub(super) fn run(job: Job<'_>) -> Outcome {
    let mut out = Outcome::default();
    let events = job.stream.events();
    let Some(idxs) = job.stream.threads().get(&job.key) else {
        return out;
    };
    let first_t = events.first().map_or(0, |e| e.t_start);
    let pacing = job.plan.pacing;
    let mut exec = Exec {
        job: &job,
        handles: HashMap::new(),
        buf: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(job.plan.seed ^ (u64::from(job.key.pid) << 32 | u64::from(job.key.tid))),
    };

    let mut prev: Option<(Instant, &TraceEvent)> = None;
    let mut last_seen = job.t0.min(Instant::now());
    for &i in idxs {
        if job.cancel.is_cancelled() || job.failed.load(Ordering::SeqCst) {
            break;
        }
        let ev = &events[i];
        let target = match prev {
            _ if pacing == Pacing::Fast => job.t0,
            None => job.t0 + nanos(job.offset) + nanos(pacing.scale(ev.t_start - first_t)),
            Some((end, p)) => end + nanos(pacing.scale(ev.t_start.saturating_sub(p.t_end))),
        };
        if !wait_until(target, &job) {
            break;
        }

        let start = Instant::now();
        if start < last_seen {
            out.error = Some(ReplayError::ClockSkew);
            job.failed.store(true, Ordering::SeqCst);
            break;
        }
        let res = exec.execute(i, ev);
        let end = Instant::now();
        last_seen = end;

        let actual = since(job.t0, start);
        out.entries.push(LogEntry {
            stream_id: job.stream.stream_id(),
            pid: ev.pid,
            tid: ev.tid,
            op: ev.op,
            bytes: ev.bytes(),
            scheduled_start_ns: since(job.t0, target.max(job.t0)),
            actual_start_ns: actual,
            latency_ns: since(start, end),
            wall_epoch_ns: job.wall0 + actual,
        });
        prev = Some((end, ev));

        if let Err(source) = res {
            if job.plan.strict {
                job.failed.store(true, Ordering::SeqCst);
                out.error = Some(ReplayError::TargetIoError {
                    stream_id: job.stream.stream_id(),
                    index: i,
                    op: ev.op,
                    source,
                });
                break;
            }
            log::warn!("stream {} event {i} ({}): {source}", job.stream.stream_id(), ev.op);
            out.failures.push(OpFailure {
                stream_id: job.stream.stream_id(),
                index: i,
                op: ev.op,
                message: source.to_string(),
            });
        }
    }
    out
}

fn nanos(ns: u64) -> Duration {
    Duration::from_nanos(ns)
}

fn since(from: Instant, to: Instant) -> u64 {
    to.saturating_duration_since(from).as_nanos() as u64
}

/// Sleeps until `target`. Returns false if the run was stopped meanwhile.
fn wait_until(target: Instant, job: &Job<'_>) -> bool {
    loop {
        if job.cancel.is_cancelled() || job.failed.load(Ordering::SeqCst) {
            return false;
        }
        let now = Instant::now();
        if now >= target {
            return true;
        }
        std::thread::sleep((target - now).min(WAIT_SLICE));
    }
}

impl Exec<'_> {
    fn execute(&mut self, i: usize, ev: &TraceEvent) -> io::Result<()> {
        match ev.op {
            OpKind::Open => {
                let file = self.open(i)?;
                self.handles.insert(i, Handle { file, pos: 0 });
                Ok(())
            }
            OpKind::Close => {
                if let Some(b) = self.job.stream.binding(i) {
                    self.handles.remove(&b);
                }
                Ok(())
            }
            OpKind::Lseek => {
                let off = ev.offset.unwrap_or(0);
                let h = self.handle(i)?;
                h.file.seek(SeekFrom::Start(off))?;
                h.pos = off;
                Ok(())
            }
            OpKind::Read | OpKind::Write => {
                let n = ev.bytes() as usize;
                let want = self.job.positions[i].unwrap_or(0);
                if self.buf.len() < n {
                    let old = self.buf.len();
                    self.buf.resize(n, 0);
                    self.rng.fill_bytes(&mut self.buf[old..]);
                }
                let mut buf = std::mem::take(&mut self.buf);
                let res = self.transfer(i, ev.op, want, &mut buf[..n]);
                self.buf = buf;
                res
            }
            OpKind::Meta => {
                self.handle(i)?.file.metadata()?;
                Ok(())
            }
        }
    }

    fn transfer(&mut self, i: usize, op: OpKind, want: u64, buf: &mut [u8]) -> io::Result<()> {
        let h = self.handle(i)?;
        if h.pos != want {
            h.file.seek(SeekFrom::Start(want))?;
            h.pos = want;
        }
        if op == OpKind::Write {
            h.file.write_all(buf)?;
        } else {
            let mut done = 0;
            while done < buf.len() {
                match h.file.read(&mut buf[done..]) {
                    Ok(0) => {
                        h.pos += done as u64;
                        return Err(io::Error::new(
                            io::ErrorKind::UnexpectedEof,
                            format!("short read, {done} of {} bytes", buf.len()),
                        ));
                    }
                    Ok(k) => done += k,
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                    Err(e) => return Err(e),
                }
            }
        }
        h.pos += buf.len() as u64;
        Ok(())
    }

    /// Handle of the instance event `i` uses. Instances opened by another
    /// thread of the process are opened here on first use.
    fn handle(&mut self, i: usize) -> io::Result<&mut Handle> {
        let b = self
            .job
            .stream
            .binding(i)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "descriptor has no open"))?;
        if !self.handles.contains_key(&b) {
            let file = self.open(b)?;
            self.handles.insert(b, Handle { file, pos: 0 });
        }
        Ok(self.handles.get_mut(&b).expect("inserted above"))
    }

    fn open(&self, open_idx: usize) -> io::Result<File> {
        let path = self
            .job
            .stream
            .path_of(open_idx)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "open without a path"))?;
        let target = target_path(&self.job.plan.target_root, path)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        let mut opts = OpenOptions::new();
        opts.read(true).write(true).create(true);
        #[cfg(unix)]
        if self.job.plan.sync_writes {
            use std::os::unix::fs::OpenOptionsExt;
            opts.custom_flags(libc::O_SYNC);
        }
        opts.open(target)
    }
}
