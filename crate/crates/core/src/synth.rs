//! Seeded synthetic trace generation.
//!
//! Each generated thread opens every file up front, issues a random sequence
//! of operations drawn from the op mix, and closes its files at the end. An
//! `lseek` picks a file and a page-aligned position uniformly at random, so
//! reads and writes land on all stripes of a file; reads and writes then use
//! the file most recently seeked on that thread.
//!
//! Response times follow a fixed service model (see [`service_time_ns`]) since
//! only the issue pattern matters to replay and simulation.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal};
use thiserror::Error;

use crate::trace::{self, IoStream, Mode, OpKind, TraceError, TraceEvent};

const PAGE: u64 = 4096;
const MIX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(reason: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec(reason.into())
}

/// Fractions of drawn operations per kind. Opens and closes are structural
/// and not part of the mix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpMix {
    pub read: f64,
    pub write: f64,
    pub lseek: f64,
    pub meta: f64,
}

impl OpMix {
    pub fn sum(&self) -> f64 {
        self.read + self.write + self.lseek + self.meta
    }

    /// Scales the fractions to sum to one.
    pub fn normalized(self) -> OpMix {
        let s = self.sum();
        OpMix {
            read: self.read / s,
            write: self.write / s,
            lseek: self.lseek / s,
            meta: self.meta / s,
        }
    }

    pub fn get(&self, kind: OpKind) -> f64 {
        match kind {
            OpKind::Read => self.read,
            OpKind::Write => self.write,
            OpKind::Lseek => self.lseek,
            OpKind::Meta => self.meta,
            OpKind::Open | OpKind::Close => 0.0,
        }
    }

    fn weights(&self) -> [(OpKind, f64); 4] {
        [
            (OpKind::Read, self.read),
            (OpKind::Write, self.write),
            (OpKind::Lseek, self.lseek),
            (OpKind::Meta, self.meta),
        ]
    }
}

impl fmt::Display for OpMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "read={},write={},lseek={},meta={}",
            self.read, self.write, self.lseek, self.meta
        )
    }
}

impl FromStr for OpMix {
    type Err = SynthError;

    /// `read=0.5,write=0.5`; omitted kinds are zero.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut mix = OpMix {
            read: 0.0,
            write: 0.0,
            lseek: 0.0,
            meta: 0.0,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| invalid(format!("op mix entry `{part}` is not kind=fraction")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("op mix fraction `{v}` is not a number")))?;
            match k.trim() {
                "read" => mix.read = v,
                "write" => mix.write = v,
                "lseek" => mix.lseek = v,
                "meta" => mix.meta = v,
                other => return Err(invalid(format!("op mix kind `{other}` cannot be drawn"))),
            }
        }
        Ok(mix)
    }
}

/// Payload size distribution, in bytes. Draws are rounded and floored at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SizeModel {
    Constant(u64),
    /// Inclusive on both ends.
    Uniform {
        lo: u64,
        hi: u64,
    },
    /// Parameters of the underlying normal distribution.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
}

impl SizeModel {
    /// Log-normal with the given mean and log-space spread.
    pub fn lognormal_with_mean(mean: f64, sigma: f64) -> SizeModel {
        SizeModel::LogNormal {
            mu: mean.ln() - sigma * sigma / 2.0,
            sigma,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SizeModel::Constant(c) => c as f64,
            SizeModel::Uniform { lo, hi } => (lo + hi) as f64 / 2.0,
            SizeModel::LogNormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
        }
    }

    fn validate(&self, which: &str) -> Result<(), SynthError> {
        match *self {
            SizeModel::Constant(0) => Err(invalid(format!("{which} size must be at least 1 byte"))),
            SizeModel::Uniform { lo, hi } if lo == 0 || lo > hi => {
                Err(invalid(format!("{which} size range {lo}..{hi} is empty or includes 0")))
            }
            SizeModel::LogNormal { mu, sigma } if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 => Err(invalid(
                format!("{which} lognormal parameters ({mu}, {sigma}) are invalid"),
            )),
            _ => Ok(()),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match *self {
            SizeModel::Constant(c) => c,
            SizeModel::Uniform { lo, hi } => rng.random_range(lo..=hi),
            SizeModel::LogNormal { mu, sigma } => {
                let d = LogNormal::new(mu, sigma).expect("validated");
                (d.sample(rng).round() as u64).max(1)
            }
        }
    }
}

impl fmt::Display for SizeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SizeModel::Constant(c) => write!(f, "const:{c}"),
            SizeModel::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            SizeModel::LogNormal { mu, sigma } => write!(f, "lognormal:{mu}:{sigma}"),
        }
    }
}

impl FromStr for SizeModel {
    type Err = SynthError;

    /// `const:N`, `uniform:A:B`, `lognormal:MU:SIGMA` or `lognormal-mean:MEAN:SIGMA`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let int = |v: &str| parse_bytes(v).ok_or_else(|| invalid(format!("`{v}` is not a byte count")));
        let float = |v: &str| v.parse::<f64>().map_err(|_| invalid(format!("`{v}` is not a number")));
        match parts.as_slice() {
            ["const", c] => Ok(SizeModel::Constant(int(c)?)),
            ["uniform", a, b] => Ok(SizeModel::Uniform {
                lo: int(a)?,
                hi: int(b)?,
            }),
            ["lognormal", mu, sigma] => Ok(SizeModel::LogNormal {
                mu: float(mu)?,
                sigma: float(sigma)?,
            }),
            ["lognormal-mean", mean, sigma] => Ok(SizeModel::lognormal_with_mean(float(mean)?, float(sigma)?)),
            _ => Err(invalid(format!("unknown size model `{s}`"))),
        }
    }
}

/// Read and write size models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeModels {
    pub read: SizeModel,
    pub write: SizeModel,
}

impl fmt::Display for SizeModels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "read={},write={}", self.read, self.write)
    }
}

impl FromStr for SizeModels {
    type Err = SynthError;

    /// `read=<model>,write=<model>`, or a single model for both.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if !s.contains('=') {
            let m: SizeModel = s.parse()?;
            return Ok(SizeModels { read: m, write: m });
        }
        let (mut read, mut write) = (None, None);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some(("read", m)) => read = Some(m.parse()?),
                Some(("write", m)) => write = Some(m.parse()?),
                _ => return Err(invalid(format!("size model entry `{part}` is not read=.. or write=.."))),
            }
        }
        match (read, write) {
            (Some(read), Some(write)) => Ok(SizeModels { read, write }),
            _ => Err(invalid("size model needs both read= and write=")),
        }
    }
}

/// Distribution of the gap between consecutive operations of a thread.
#[derive(Debug, Clone, PartialEq)]
pub enum ThinkModel {
    Constant(u64),
    Exponential {
        mean_ns: f64,
    },
    /// Resample gaps observed in a recorded trace.
    Empirical {
        source: String,
        gaps: Vec<u64>,
    },
}

impl ThinkModel {
    /// Parses `const:D`, `exp:D` or `empirical:<trace file>`; `D` is an
    /// integer with an optional `ns`, `us`, `ms` or `s` suffix.
    pub fn parse(s: &str) -> Result<ThinkModel, SynthError> {
        let s = s.trim();
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("unknown think model `{s}`")))?;
        let dur = |v: &str| parse_duration_ns(v).ok_or_else(|| invalid(format!("`{v}` is not a duration")));
        match kind {
            "const" => Ok(ThinkModel::Constant(dur(arg)?)),
            "exp" => Ok(ThinkModel::Exponential {
                mean_ns: dur(arg)? as f64,
            }),
            "empirical" => ThinkModel::from_trace_file(arg),
            _ => Err(invalid(format!("unknown think model `{s}`"))),
        }
    }

    pub fn from_trace_file(path: impl AsRef<Path>) -> Result<ThinkModel, SynthError> {
        let path = path.as_ref();
        let stream = trace::parse_trace(fs::File::open(path)?, Mode::Repair)?;
        let gaps = trace::derive_think_times(&stream).all_gaps().collect();
        Ok(ThinkModel::Empirical {
            source: path.display().to_string(),
            gaps,
        })
    }

    fn validate(&self) -> Result<(), SynthError> {
        match self {
            ThinkModel::Exponential { mean_ns } if !mean_ns.is_finite() || *mean_ns <= 0.0 => {
                Err(invalid("exponential think time needs a positive mean"))
            }
            ThinkModel::Empirical { gaps, .. } if gaps.is_empty() => {
                Err(invalid("empirical think model has no gaps to resample"))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            ThinkModel::Constant(c) => *c,
            ThinkModel::Exponential { mean_ns } => {
                let d = Exp::new(1.0 / mean_ns).expect("validated");
                d.sample(rng).round() as u64
            }
            ThinkModel::Empirical { gaps, .. } => gaps[rng.random_range(0..gaps.len())],
        }
    }
}

impl fmt::Display for ThinkModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThinkModel::Constant(c) => write!(f, "const:{c}ns"),
            ThinkModel::Exponential { mean_ns } => write!(f, "exp:{}ns", mean_ns.round() as u64),
            ThinkModel::Empirical { source, .. } => write!(f, "empirical:{source}"),
        }
    }
}

/// Everything that determines a generated trace.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub op_mix: OpMix,
    pub size_model: SizeModels,
    pub think_model: ThinkModel,
    pub n_files: u32,
    pub file_size_bytes: u64,
    pub n_threads: u32,
    /// Operations drawn from the mix; opens and closes come on top.
    pub n_events: u64,
    pub seed: u64,
    pub stream_id: u32,
}

/// Names of the bundled specs accepted by [`GenSpec::bundled`].
pub const BUNDLED: &[&str] = &["maxdb-init"];

impl GenSpec {
    /// Write-heavy database initialization profile.
    ///
    /// Mix and mean sizes follow the measured MaxDB initialization phase:
    /// 2.3% reads (mean 6884 B), 48% writes (mean 7995 B), 49.7% lseeks and
    /// 0.004% metadata ops. The published fractions add up to 100.004%, so they
    /// are renormalized. Sizes are log-normal around those means.
    pub fn maxdb_init() -> GenSpec {
        GenSpec {
            op_mix: OpMix {
                read: 0.023,
                write: 0.48,
                lseek: 0.497,
                meta: 0.00004,
            }
            .normalized(),
            size_model: SizeModels {
                read: SizeModel::lognormal_with_mean(6884.0, 0.5),
                write: SizeModel::lognormal_with_mean(7995.0, 0.5),
            },
            think_model: ThinkModel::Exponential { mean_ns: 40e6 },
            n_files: 4,
            file_size_bytes: 64 << 20,
            n_threads: 4,
            n_events: 100_000,
            seed: 0,
            stream_id: 0,
        }
    }

    pub fn bundled(name: &str) -> Option<GenSpec> {
        match name {
            "maxdb-init" => Some(GenSpec::maxdb_init()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let mix = &self.op_mix;
        if mix.weights().iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(invalid("op mix fractions must be finite and non-negative"));
        }
        if (mix.sum() - 1.0).abs() > MIX_TOLERANCE {
            return Err(invalid(format!("op mix sums to {}, not 1", mix.sum())));
        }
        if self.n_files == 0 || self.n_threads == 0 || self.n_events == 0 {
            return Err(invalid("n_files, n_threads and n_events must be at least 1"));
        }
        if self.file_size_bytes < PAGE {
            return Err(invalid(format!("file_size_bytes must be at least {PAGE}")));
        }
        let fd_space = u64::from(self.n_threads) * u64::from(self.n_files);
        if fd_space > u64::from(u32::MAX) - 3 {
            return Err(invalid("too many threads x files for the descriptor space"));
        }
        self.size_model.read.validate("read")?;
        self.size_model.write.validate("write")?;
        self.think_model.validate()
    }

    /// Reads a flat `key = value` config. Keys not given keep the values of
    /// `base`. `#` starts a comment.
    pub fn from_config(text: &str, base: GenSpec) -> Result<GenSpec, SynthError> {
        let mut spec = base;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| SynthError::Config {
                line,
                reason: "expected key = value".into(),
            })?;
            spec.set(key.trim(), value.trim()).map_err(|e| SynthError::Config {
                line,
                reason: e.to_string(),
            })?;
        }
        Ok(spec)
    }

    /// Sets one field from its textual form, using the config key names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SynthError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, SynthError> {
            v.parse()
                .map_err(|_| invalid(format!("{key}: `{v}` is not a valid number")))
        }
        match key {
            "op_mix" => self.op_mix = value.parse()?,
            "size_model" => self.size_model = value.parse()?,
            "think_model" => self.think_model = ThinkModel::parse(value)?,
            "n_files" => self.n_files = num(key, value)?,
            "file_size_bytes" => {
                self.file_size_bytes =
                    parse_bytes(value).ok_or_else(|| invalid(format!("{key}: `{value}` is not a byte count")))?
            }
            "n_threads" => self.n_threads = num(key, value)?,
            "n_events" => self.n_events = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "stream_id" => self.stream_id = num(key, value)?,
            other => return Err(invalid(format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}

impl fmt::Display for GenSpec {
    /// Renders the spec in config-file form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "op_mix = {}", self.op_mix)?;
        writeln!(f, "size_model = {}", self.size_model)?;
        writeln!(f, "think_model = {}", self.think_model)?;
        writeln!(f, "n_files = {}", self.n_files)?;
        writeln!(f, "file_size_bytes = {}", self.file_size_bytes)?;
        writeln!(f, "n_threads = {}", self.n_threads)?;
        writeln!(f, "n_events = {}", self.n_events)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "stream_id = {}", self.stream_id)
    }
}

/// Response time assigned to a generated operation.
pub fn service_time_ns(op: OpKind, nbytes: u64) -> u64 {
    match op {
        OpKind::Open | OpKind::Close => 20_000,
        OpKind::Lseek => 2_000,
        OpKind::Meta => 5_000,
        // 50 us setup plus 200 MB/s transfer
        OpKind::Read | OpKind::Write => 50_000 + nbytes * 5,
    }
}

pub const SYNTH_PID: u32 = 100;

pub fn file_path(index: u32) -> String {
    format!("/data/file-{index:03}")
}

struct ThreadState {
    tid: u32,
    clock: u64,
    current_file: u32,
}

/// Generates a trace from `spec`. The same spec always yields the same trace.
pub fn generate(spec: &GenSpec) -> Result<IoStream, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mix_weights = spec.op_mix.weights();
    let picker =
        WeightedIndex::new(mix_weights.iter().map(|(_, w)| *w)).map_err(|e| invalid(format!("op mix: {e}")))?;
    let pages = (spec.file_size_bytes / PAGE).max(1);

    let fd = |t: u32, f: u32| 3 + t * spec.n_files + f;
    let mut events = Vec::with_capacity(spec.n_events as usize + 2 * (spec.n_threads * spec.n_files) as usize);
    let push = |events: &mut Vec<TraceEvent>, th: &mut ThreadState, ev: TraceEvent, gap: u64| {
        let start = th.clock + gap;
        let end = start + service_time_ns(ev.op, ev.bytes());
        th.clock = end;
        events.push(ev.stream(spec.stream_id).thread(SYNTH_PID, th.tid).at(start, end));
    };

    let mut threads: Vec<ThreadState> = (0..spec.n_threads)
        .map(|t| ThreadState {
            tid: t + 1,
            clock: 0,
            current_file: rng.random_range(0..spec.n_files),
        })
        .collect();

    for (t, th) in threads.iter_mut().enumerate() {
        for f in 0..spec.n_files {
            push(&mut events, th, TraceEvent::open(fd(t as u32, f), file_path(f)), 0);
        }
    }

    for _ in 0..spec.n_events {
        let t = rng.random_range(0..spec.n_threads);
        let kind = mix_weights[picker.sample(&mut rng)].0;
        let gap = spec.think_model.sample(&mut rng);
        let th = &mut threads[t as usize];
        let ev = match kind {
            OpKind::Lseek => {
                th.current_file = rng.random_range(0..spec.n_files);
                let target = rng.random_range(0..pages) * PAGE;
                TraceEvent::lseek(fd(t, th.current_file), target)
            }
            OpKind::Read => TraceEvent::read(fd(t, th.current_file), spec.size_model.read.sample(&mut rng)),
            OpKind::Write => TraceEvent::write(fd(t, th.current_file), spec.size_model.write.sample(&mut rng)),
            OpKind::Meta => TraceEvent::meta(fd(t, th.current_file)),
            OpKind::Open | OpKind::Close => unreachable!("not part of the mix"),
        };
        push(&mut events, th, ev, gap);
    }

    for (t, th) in threads.iter_mut().enumerate() {
        for f in 0..spec.n_files {
            let gap = spec.think_model.sample(&mut rng);
            push(&mut events, th, TraceEvent::close(fd(t as u32, f)), gap);
        }
    }

    Ok(IoStream::from_events(events, Mode::Strict)?)
}

/// Parses `4096`, `128KiB`, `64MiB`, `1GiB` (also `K`, `M`, `G`, `KB`, ...
/// as binary multiples).
pub fn parse_bytes(s: &str) -> Option<u64> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: u64 = num.parse().ok()?;
    let mult: u64 = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => 1 << 10,
        "m" | "mb" | "mib" => 1 << 20,
        "g" | "gb" | "gib" => 1 << 30,
        _ => return None,
    };
    n.checked_mul(mult)
}

/// Parses an integer duration with an optional `ns`, `us`, `ms` or `s`
/// suffix (default nanoseconds).
pub fn parse_duration_ns(s: &str) -> Option<u64> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: u64 = num.parse().ok()?;
    let mult: u64 = match unit.trim() {
        "" | "ns" => 1,
        "us" => 1_000,
        "ms" => 1_000_000,
        "s" => 1_000_000_000,
        _ => return None,
    };
    n.checked_mul(mult)
}
