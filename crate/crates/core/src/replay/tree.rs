use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Component, Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ReplayError, ReplayPlan};
use crate::sim::file_id;
use crate::trace;

const FILL_CHUNK: usize = 1 << 20;

/// Files created by [`prepare_tree`], keyed by their location on disk.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilePopulation {
    pub files: BTreeMap<PathBuf, u64>,
}

impl FilePopulation {
    pub fn total_bytes(&self) -> u64 {
        self.files.values().sum()
    }
}

/// Where a trace path lives under `root`. Absolute trace paths are re-rooted;
/// `..` components are refused.
pub fn target_path(root: &Path, trace_path: &str) -> Result<PathBuf, ReplayError> {
    let mut out = root.to_path_buf();
    let mut pushed = false;
    for c in Path::new(trace_path).components() {
        match c {
            Component::Normal(part) => {
                out.push(part);
                pushed = true;
            }
            Component::RootDir | Component::CurDir => {}
            Component::ParentDir | Component::Prefix(_) => {
                return Err(ReplayError::InvalidPath(trace_path.to_string()))
            }
        }
    }
    if !pushed {
        return Err(ReplayError::InvalidPath(trace_path.to_string()));
    }
    Ok(out)
}

/// Creates every opened path under the target root, sized to the furthest byte
/// any stream reaches in it and filled with seeded pseudo-random bytes.
pub fn prepare_tree(plan: &ReplayPlan) -> Result<FilePopulation, ReplayError> {
    let mut need: BTreeMap<String, u64> = BTreeMap::new();
    for (s, _) in &plan.streams {
        let ext = trace::file_extents(s).map_err(|source| ReplayError::Position {
            stream_id: s.stream_id(),
            source,
        })?;
        for (path, size) in ext {
            let slot = need.entry(path).or_insert(0);
            *slot = (*slot).max(size);
        }
    }

    let mut pop = FilePopulation::default();
    for (path, size) in need {
        let target = target_path(&plan.target_root, &path)?;
        if let Some(dir) = target.parent() {
            fs::create_dir_all(dir).map_err(|e| ReplayError::from_io(dir, e))?;
        }
        fill(&target, size, plan.seed ^ file_id(&path)).map_err(|e| ReplayError::from_io(&target, e))?;
        log::debug!("prepared {} ({size} bytes)", target.display());
        pop.files.insert(target, size);
    }
    Ok(pop)
}

fn fill(path: &Path, size: u64, seed: u64) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BufWriter::new(File::create(path)?);
    let mut buf = vec![0u8; FILL_CHUNK];
    let mut left = size;
    while left > 0 {
        let n = left.min(FILL_CHUNK as u64) as usize;
        rng.fill_bytes(&mut buf[..n]);
        out.write_all(&buf[..n])?;
        left -= n as u64;
    }
    out.into_inner().map_err(|e| e.into_error())?.sync_all()
}
