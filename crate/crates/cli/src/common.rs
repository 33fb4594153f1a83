use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use itb_core::metrics::MetricsError;
use itb_core::offsets::{OffsetsError, StartOffsets};
use itb_core::replay::{LogError, ReplayError};
use itb_core::sim::SimError;
use itb_core::synth::{self, SynthError};
use itb_core::trace::{self, IoStream, Mode, TraceError};

use crate::OffsetArgs;

pub fn mode(strict: bool) -> Mode {
    if strict {
        Mode::Strict
    } else {
        Mode::Repair
    }
}

pub fn open_out(path: &Path) -> Result<Box<dyn Write>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufWriter::new(io::stdout().lock())));
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(Box::new(BufWriter::new(f)))
}

pub fn read_input(path: &Path) -> Result<String> {
    let mut text = String::new();
    if path.as_os_str() == "-" {
        io::stdin().read_to_string(&mut text)?;
    } else {
        text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    }
    Ok(text)
}

pub fn load_trace(path: &Path, strict: bool) -> Result<IoStream> {
    let text = read_input(path)?;
    trace::parse_str(&text, mode(strict)).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_traces(paths: &[std::path::PathBuf], strict: bool) -> Result<Vec<IoStream>> {
    paths.iter().map(|p| load_trace(p, strict)).collect()
}

/// `n` streams; stream `i` is `traces[i % len]` relabeled to id `i`.
pub fn replicate(traces: &[IoStream], n: Option<usize>) -> Vec<IoStream> {
    let n = n.unwrap_or(traces.len());
    (0..n).map(|i| traces[i % traces.len()].relabeled(i as u32)).collect()
}

pub fn max_offset_ns(args: &OffsetArgs) -> Result<u64> {
    synth::parse_duration_ns(&args.max_offset).with_context(|| format!("bad --max-offset `{}`", args.max_offset))
}

/// Offsets for `n` streams. An existing sidecar is reused, a missing one is
/// drawn with `seed` and saved; without a sidecar the offsets are drawn if
/// `random`, else zero.
pub fn resolve_offsets(args: &OffsetArgs, n: usize, seed: u64, random: bool) -> Result<StartOffsets> {
    let max = max_offset_ns(args)?;
    match &args.offsets {
        Some(path) if path.exists() => {
            let offs = StartOffsets::load(path).with_context(|| format!("loading {}", path.display()))?;
            if offs.len() < n {
                bail!("{} holds {} offsets, {n} streams need them", path.display(), offs.len());
            }
            log::info!("reusing start offsets from {}", path.display());
            Ok(offs)
        }
        Some(path) => {
            let offs = StartOffsets::uniform(n, seed, max);
            offs.save(path).with_context(|| format!("writing {}", path.display()))?;
            Ok(offs)
        }
        None if random => Ok(StartOffsets::uniform(n, seed, max)),
        None => Ok(StartOffsets::zero(n)),
    }
}

pub fn parse_only(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or("expected <stream_id>:<pid>")?;
    Ok((
        a.parse().map_err(|_| "bad stream id")?,
        b.parse().map_err(|_| "bad pid")?,
    ))
}

fn variant<T: std::fmt::Debug>(module: &str, e: &T) -> String {
    let dbg = format!("{e:?}");
    let name: String = dbg.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
    format!("{module}::{name}")
}

/// `Module::Variant` of the outermost library error in the chain.
pub fn domain_name(err: &anyhow::Error) -> Option<String> {
    err.chain().find_map(|e| {
        if let Some(e) = e.downcast_ref::<TraceError>() {
            Some(variant("TraceError", e))
        } else if let Some(e) = e.downcast_ref::<SynthError>() {
            Some(variant("SynthError", e))
        } else if let Some(e) = e.downcast_ref::<SimError>() {
            Some(variant("SimError", e))
        } else if let Some(e) = e.downcast_ref::<ReplayError>() {
            Some(variant("ReplayError", e))
        } else if let Some(e) = e.downcast_ref::<MetricsError>() {
            Some(variant("MetricsError", e))
        } else if let Some(e) = e.downcast_ref::<OffsetsError>() {
            Some(variant("OffsetsError", e))
        } else {
            e.downcast_ref::<LogError>().map(|e| variant("LogError", e))
        }
    })
}
