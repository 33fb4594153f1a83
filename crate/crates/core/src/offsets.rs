//! Per-stream start offsets.
//!
//! Concurrent streams are started at offsets drawn once, uniformly from
//! `[0, max]`, and then reused by every replay and simulation of the same
//! experiment. The sidecar file keeps them across runs:
//!
//! ```text
//! itb-offsets v1
//! 0,120394857712
//! 1,3880012
//! ```

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const OFFSETS_HEADER: &str = "itb-offsets v1";

/// Upper end of the start-offset interval: 300 s.
pub const DEFAULT_MAX_OFFSET_NS: u64 = 300_000_000_000;

#[derive(Debug, Error)]
pub enum OffsetsError {
    #[error("offsets line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Start offsets in nanoseconds, indexed by stream position.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StartOffsets(pub Vec<u64>);

impl StartOffsets {
    pub fn zero(n: usize) -> Self {
        StartOffsets(vec![0; n])
    }

    /// `n` offsets uniform on `[0, max_ns]`, fully determined by `seed`.
    pub fn uniform(n: usize, seed: u64, max_ns: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StartOffsets((0..n).map(|_| rng.random_range(0..=max_ns)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<u64> {
        self.0.get(i).copied()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{OFFSETS_HEADER}\n");
        for (i, o) in self.0.iter().enumerate() {
            let _ = writeln!(out, "{i},{o}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, OffsetsError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, OFFSETS_HEADER)) => {}
            other => {
                return Err(OffsetsError::Malformed {
                    line: other.map(|(n, _)| n).unwrap_or(1),
                    reason: format!("expected `{OFFSETS_HEADER}` header"),
                })
            }
        }
        let mut out = Vec::new();
        for (line, l) in lines {
            let bad = |reason: &str| OffsetsError::Malformed {
                line,
                reason: reason.to_string(),
            };
            let (idx, off) = l.split_once(',').ok_or_else(|| bad("expected index,offset_ns"))?;
            let idx: usize = idx.trim().parse().map_err(|_| bad("bad stream index"))?;
            let off: u64 = off.trim().parse().map_err(|_| bad("bad offset"))?;
            if idx != out.len() {
                return Err(bad("stream indices must be consecutive from 0"));
            }
            out.push(off);
        }
        Ok(StartOffsets(out))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, OffsetsError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), OffsetsError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
