//! Distribution-function simulation.
//!
//! Every read and write of a trace is mapped to the OSDs holding the stripes it
//! touches. Per second of (shifted) trace time and per op type the hits are
//! counted into an [`OsdPattern`]; the standard deviation of a pattern measures
//! how unevenly that second loaded the OSDs, and [`balance_report`] averages it
//! over the whole run.
//!
//! Placement:
//!
//! - round robin: stripe `j` lives on OSD `j mod N`;
//! - hashed: stripe `j` of file `f` lives on OSD `H(f, j, seed) mod N` with
//!   `H(f, j, s) = mix(mix(mix(s) ^ f) ^ j)` and `mix` the splitmix64
//!   finalizer. File ids are the 64-bit FNV-1a hash of the path bytes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::stats::{self, Estimator};
use crate::trace::{self, IoStream, OpKind, PositionError};

pub const DEFAULT_STRIPE_SIZE: u64 = 128 * 1024;
/// Entries above this count are active.
pub const DEFAULT_THRESHOLD: u64 = 30;

const NS_PER_SEC: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid stripe config: {0}")]
    InvalidConfig(String),
    #[error("analytic sigma needs 0 <= k <= N and N >= 1 (k = {k}, N = {n})")]
    DomainError { k: u32, n: u32 },
    #[error("stream {stream}: {source}")]
    Position {
        stream: usize,
        #[source]
        source: PositionError,
    },
    #[error("stream {stream}: shifted timestamp overflows")]
    TimeOverflow { stream: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    RoundRobin,
    Hashed { seed: u64 },
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::RoundRobin => f.write_str("rr"),
            Placement::Hashed { seed } => write!(f, "hash:{seed}"),
        }
    }
}

impl FromStr for Placement {
    type Err = SimError;

    /// `rr` or `hash:<seed>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "rr" || s == "round_robin" => Ok(Placement::RoundRobin),
            Some(("hash" | "hashed", seed)) => seed
                .parse()
                .map(|seed| Placement::Hashed { seed })
                .map_err(|_| SimError::InvalidConfig(format!("bad hash seed `{seed}`"))),
            _ => Err(SimError::InvalidConfig(format!(
                "unknown policy `{s}` (rr|hash:<seed>)"
            ))),
        }
    }
}

/// Stripe size, stripe width (= number of OSDs) and placement policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StripeConfig {
    stripe_size: u64,
    width: u32,
    placement: Placement,
}

impl StripeConfig {
    pub fn new(stripe_size: u64, width: u32, placement: Placement) -> Result<Self, SimError> {
        if stripe_size == 0 {
            return Err(SimError::InvalidConfig("stripe size must be at least 1 byte".into()));
        }
        if width == 0 {
            return Err(SimError::InvalidConfig("stripe width must be at least 1".into()));
        }
        Ok(StripeConfig {
            stripe_size,
            width,
            placement,
        })
    }

    pub fn stripe_size(&self) -> u64 {
        self.stripe_size
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    /// OSD holding stripe `stripe` of file `file_id`.
    pub fn osd(&self, file_id: u64, stripe: u64) -> u32 {
        let n = u64::from(self.width);
        let slot = match self.placement {
            Placement::RoundRobin => stripe % n,
            Placement::Hashed { seed } => stripe_hash(file_id, stripe, seed) % n,
        };
        slot as u32
    }

    /// Sorted, de-duplicated OSDs holding `[offset, offset + length)`.
    pub fn map_access(&self, file_id: u64, offset: u64, length: u64) -> Vec<u32> {
        if length == 0 {
            return Vec::new();
        }
        let first = offset / self.stripe_size;
        let last = offset.saturating_add(length - 1) / self.stripe_size;
        let n = self.width as usize;
        let span = last - first;
        if self.placement == Placement::RoundRobin && span >= u64::from(self.width) - 1 {
            return (0..self.width).collect();
        }
        let mut hit = vec![false; n];
        let mut seen = 0;
        for j in first..=last {
            let o = self.osd(file_id, j) as usize;
            if !hit[o] {
                hit[o] = true;
                seen += 1;
                if seen == n {
                    break;
                }
            }
        }
        (0..self.width).filter(|&o| hit[o as usize]).collect()
    }
}

pub fn map_access(cfg: &StripeConfig, file_id: u64, offset: u64, length: u64) -> Vec<u32> {
    cfg.map_access(file_id, offset, length)
}

/// splitmix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stripe_hash(file_id: u64, stripe: u64, seed: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ file_id) ^ stripe)
}

/// 64-bit FNV-1a of the path bytes.
pub fn file_id(path: &str) -> u64 {
    path.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

impl AccessKind {
    pub const BOTH: [AccessKind; 2] = [AccessKind::Read, AccessKind::Write];

    pub fn as_str(self) -> &'static str {
        match self {
            AccessKind::Read => "read",
            AccessKind::Write => "write",
        }
    }

    fn of(op: OpKind) -> Option<AccessKind> {
        match op {
            OpKind::Read => Some(AccessKind::Read),
            OpKind::Write => Some(AccessKind::Write),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AccessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hits per OSD during one second, for one op type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OsdPattern {
    pub second: u64,
    pub op: AccessKind,
    pub counts: Vec<u64>,
}

impl OsdPattern {
    pub fn sigma(&self) -> f64 {
        pattern_sigma(&self.counts)
    }
}

/// Incrementally superimposes streams into per-second OSD patterns.
///
/// Seconds are indexed by `floor((t_start + start_offset) / 1 s)`; an access
/// counts once, in the second it starts, for each OSD it touches.
#[derive(Debug, Clone)]
pub struct PatternAccumulator {
    cfg: StripeConfig,
    counts: [BTreeMap<u64, Vec<u64>>; 2],
    seen: [bool; 2],
    span: Option<(u64, u64)>,
    streams: usize,
}

impl PatternAccumulator {
    pub fn new(cfg: StripeConfig) -> Self {
        PatternAccumulator {
            cfg,
            counts: [BTreeMap::new(), BTreeMap::new()],
            seen: [false; 2],
            span: None,
            streams: 0,
        }
    }

    pub fn config(&self) -> &StripeConfig {
        &self.cfg
    }

    pub fn add_stream(&mut self, stream: &IoStream, start_offset_ns: u64) -> Result<(), SimError> {
        let idx = self.streams;
        let starts = trace::positions(stream).map_err(|source| SimError::Position { stream: idx, source })?;
        let mut ids: HashMap<usize, u64> = HashMap::new();
        let width = self.cfg.width as usize;
        for (i, ev) in stream.events().iter().enumerate() {
            let shifted = ev
                .t_start
                .checked_add(start_offset_ns)
                .ok_or(SimError::TimeOverflow { stream: idx })?;
            let second = shifted / NS_PER_SEC;
            self.span = Some(match self.span {
                None => (second, second),
                Some((lo, hi)) => (lo.min(second), hi.max(second)),
            });
            let Some(kind) = AccessKind::of(ev.op) else { continue };
            self.seen[kind.index()] = true;
            let open = stream.binding(i).expect("data ops are bound in a valid stream");
            let fid = *ids
                .entry(open)
                .or_insert_with(|| file_id(stream.path_of(i).unwrap_or_default()));
            let start = starts[i].expect("data ops have a position");
            let osds = self.cfg.map_access(fid, start, ev.bytes());
            if osds.is_empty() {
                continue;
            }
            let row = self.counts[kind.index()]
                .entry(second)
                .or_insert_with(|| vec![0; width]);
            for o in osds {
                row[o as usize] += 1;
            }
        }
        self.streams += 1;
        Ok(())
    }

    /// Dense patterns over every second between the first and last event,
    /// reads first. An op type without any access yields no patterns.
    pub fn patterns(&self) -> Vec<OsdPattern> {
        let Some((lo, hi)) = self.span else { return Vec::new() };
        let width = self.cfg.width as usize;
        let mut out = Vec::new();
        for kind in AccessKind::BOTH {
            if !self.seen[kind.index()] {
                continue;
            }
            let map = &self.counts[kind.index()];
            out.extend((lo..=hi).map(|second| OsdPattern {
                second,
                op: kind,
                counts: map.get(&second).cloned().unwrap_or_else(|| vec![0; width]),
            }));
        }
        out
    }
}

/// Superimposes `streams`, each shifted by its start offset, into OSD patterns.
pub fn build_patterns(streams: &[(&IoStream, u64)], cfg: &StripeConfig) -> Result<Vec<OsdPattern>, SimError> {
    let mut acc = PatternAccumulator::new(*cfg);
    for (stream, offset) in streams {
        acc.add_stream(stream, *offset)?;
    }
    Ok(acc.patterns())
}

/// Population standard deviation of the counts.
pub fn pattern_sigma(counts: &[u64]) -> f64 {
    pattern_sigma_with(counts, Estimator::Population)
}

pub fn pattern_sigma_with(counts: &[u64], estimator: Estimator) -> f64 {
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    stats::stddev(&values, estimator).unwrap_or(0.0)
}

/// Standard deviation of a width-`n` pattern with `k` entries equal to `m`
/// and the rest zero: `m * sqrt(k (n - k)) / n`.
pub fn analytic_sigma(k: u32, n: u32, m: f64) -> Result<f64, SimError> {
    if n == 0 || k > n {
        return Err(SimError::DomainError { k, n });
    }
    let (k, n) = (f64::from(k), f64::from(n));
    Ok(m * (k * (n - k)).sqrt() / n)
}

/// Number of entries strictly above `threshold`.
pub fn classify_active(counts: &[u64], threshold: u64) -> usize {
    counts.iter().filter(|&&c| c > threshold).count()
}

/// Balance summary for one op type.
#[derive(Debug, Clone, PartialEq)]
pub struct OpBalance {
    pub avg_sigma: f64,
    pub patterns: usize,
    /// `active_counts[k]` = patterns with exactly `k` active entries.
    pub active_counts: Vec<u64>,
}

impl OpBalance {
    pub fn histogram(&self) -> Vec<f64> {
        let total = self.patterns.max(1) as f64;
        self.active_counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Fraction of patterns with at most `k` active entries.
    pub fn fraction_at_most(&self, k: usize) -> f64 {
        let upto: u64 = self.active_counts.iter().take(k + 1).sum();
        upto as f64 / self.patterns.max(1) as f64
    }
}

/// What the per-pattern standard deviation is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaBasis {
    /// The raw hit counts.
    #[default]
    Counts,
    /// The 0/1 active-entry indicator of each count (`count > threshold`),
    /// i.e. the constant-`m` pattern model with `m = 1`.
    Active,
}

impl fmt::Display for SigmaBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmaBasis::Counts => "counts",
            SigmaBasis::Active => "active",
        })
    }
}

impl FromStr for SigmaBasis {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "counts" => Ok(SigmaBasis::Counts),
            "active" => Ok(SigmaBasis::Active),
            other => Err(SimError::InvalidConfig(format!(
                "unknown sigma basis `{other}` (counts|active)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceOptions {
    pub threshold: u64,
    pub estimator: Estimator,
    pub basis: SigmaBasis,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        BalanceOptions {
            threshold: DEFAULT_THRESHOLD,
            estimator: Estimator::Population,
            basis: SigmaBasis::Counts,
        }
    }
}

impl BalanceOptions {
    pub fn with_threshold(threshold: u64) -> Self {
        BalanceOptions {
            threshold,
            ..Default::default()
        }
    }

    /// Sigma of one pattern under these options.
    pub fn sigma(&self, counts: &[u64]) -> f64 {
        match self.basis {
            SigmaBasis::Counts => pattern_sigma_with(counts, self.estimator),
            SigmaBasis::Active => {
                let active: Vec<u64> = counts.iter().map(|&c| u64::from(c > self.threshold)).collect();
                pattern_sigma_with(&active, self.estimator)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    pub width: usize,
    pub options: BalanceOptions,
    pub read: Option<OpBalance>,
    pub write: Option<OpBalance>,
}

impl BalanceReport {
    pub fn avg_sigma_read(&self) -> Option<f64> {
        self.read.as_ref().map(|b| b.avg_sigma)
    }

    pub fn avg_sigma_write(&self) -> Option<f64> {
        self.write.as_ref().map(|b| b.avg_sigma)
    }

    pub fn get(&self, kind: AccessKind) -> Option<&OpBalance> {
        match kind {
            AccessKind::Read => self.read.as_ref(),
            AccessKind::Write => self.write.as_ref(),
        }
    }
}

/// Averages pattern sigmas per op type and histograms active-entry counts.
pub fn balance_report(patterns: &[OsdPattern], options: &BalanceOptions) -> BalanceReport {
    let threshold = options.threshold;
    let width = patterns.first().map(|p| p.counts.len()).unwrap_or(0);
    let side = |kind: AccessKind| -> Option<OpBalance> {
        let mut sigmas = Vec::new();
        let mut active_counts = vec![0u64; width + 1];
        for p in patterns.iter().filter(|p| p.op == kind) {
            sigmas.push(options.sigma(&p.counts));
            active_counts[classify_active(&p.counts, threshold)] += 1;
        }
        let avg_sigma = stats::mean(&sigmas)?;
        Some(OpBalance {
            avg_sigma,
            patterns: sigmas.len(),
            active_counts,
        })
    };
    BalanceReport {
        width,
        options: *options,
        read: side(AccessKind::Read),
        write: side(AccessKind::Write),
    }
}

/// Writes the per-pattern table followed by the summary block.
pub fn write_report<W: Write>(
    mut out: W,
    cfg: &StripeConfig,
    patterns: &[OsdPattern],
    report: &BalanceReport,
) -> io::Result<()> {
    writeln!(
        out,
        "# stripe_size={} width={} policy={} threshold={} estimator={} basis={}",
        cfg.stripe_size,
        cfg.width,
        cfg.placement,
        report.options.threshold,
        report.options.estimator,
        report.options.basis
    )?;
    write!(out, "op,second,sigma,active")?;
    for i in 0..cfg.width {
        write!(out, ",osd_{i}")?;
    }
    writeln!(out)?;
    for p in patterns {
        write!(
            out,
            "{},{},{},{}",
            p.op,
            p.second,
            stats::format_float(report.options.sigma(&p.counts)),
            classify_active(&p.counts, report.options.threshold)
        )?;
        for c in &p.counts {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "# summary")?;
    writeln!(out, "metric,op,value")?;
    for kind in AccessKind::BOTH {
        match report.get(kind) {
            None => writeln!(out, "avg_sigma,{kind},")?,
            Some(b) => {
                writeln!(out, "avg_sigma,{kind},{}", stats::format_float(b.avg_sigma))?;
                writeln!(out, "patterns,{kind},{}", b.patterns)?;
                for (k, frac) in b.histogram().iter().enumerate() {
                    writeln!(out, "active_{k},{kind},{}", stats::format_float(*frac))?;
                }
            }
        }
    }
    out.flush()
}
