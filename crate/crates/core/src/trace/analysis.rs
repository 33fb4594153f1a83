use std::collections::BTreeMap;

use super::{IoStream, OpKind, ThreadKey, TraceError};

/// Per-thread gaps between consecutive operations, in nanoseconds.
///
/// A gap runs from the end of one operation to the start of the next one on
/// the same thread.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ThinkTimeProfile {
    pub gaps: BTreeMap<ThreadKey, Vec<u64>>,
}

impl ThinkTimeProfile {
    pub fn total(&self, key: ThreadKey) -> u64 {
        self.gaps.get(&key).map(|g| g.iter().sum()).unwrap_or(0)
    }

    /// All gaps of all threads, in thread order.
    pub fn all_gaps(&self) -> impl Iterator<Item = u64> + '_ {
        self.gaps.values().flatten().copied()
    }
}

pub fn derive_think_times(stream: &IoStream) -> ThinkTimeProfile {
    let gaps = stream
        .threads()
        .iter()
        .map(|(&key, idxs)| {
            let g = idxs
                .windows(2)
                .map(|w| {
                    let (a, b) = (&stream.events()[w[0]], &stream.events()[w[1]]);
                    // stream invariants guarantee b.t_start >= a.t_end
                    b.t_start - a.t_end
                })
                .collect();
            (key, g)
        })
        .collect();
    ThinkTimeProfile { gaps }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KindStats {
    pub count: u64,
    pub fraction: f64,
    pub total_bytes: u64,
    /// Mean payload size; only for reads and writes that occurred.
    pub mean_bytes: Option<f64>,
}

/// Operation mix and payload volume of a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadProfile {
    kinds: [KindStats; 6],
    total: u64,
}

impl WorkloadProfile {
    pub fn get(&self, kind: OpKind) -> &KindStats {
        &self.kinds[kind.index()]
    }

    pub fn total_events(&self) -> u64 {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (OpKind, &KindStats)> {
        OpKind::ALL.into_iter().map(move |k| (k, self.get(k)))
    }
}

pub fn characterize(stream: &IoStream) -> Result<WorkloadProfile, TraceError> {
    if stream.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let mut kinds = [KindStats::default(); 6];
    for ev in stream.events() {
        let k = &mut kinds[ev.op.index()];
        k.count += 1;
        k.total_bytes += ev.bytes();
    }
    let total = stream.len() as u64;
    for (kind, k) in OpKind::ALL.into_iter().zip(kinds.iter_mut()) {
        k.fraction = k.count as f64 / total as f64;
        if kind.is_data() && k.count > 0 {
            k.mean_bytes = Some(k.total_bytes as f64 / k.count as f64);
        }
    }
    Ok(WorkloadProfile { kinds, total })
}
