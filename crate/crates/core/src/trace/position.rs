use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::{IoStream, OpKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PositionError {
    #[error("event {index}: file position does not fit in 64 bits")]
    PositionOverflow { index: usize },
    #[error("event {index}: descriptor is not bound to an open")]
    Unbound { index: usize },
}

/// Reconstructs the starting file position of every read and write.
///
/// `open` sets the position to 0, `lseek` to its absolute target, reads and
/// writes advance it by `nbytes`. The position belongs to the open instance,
/// so threads of one process sharing a descriptor share it. Entries for
/// non-data ops are `None`.
pub fn positions(stream: &IoStream) -> Result<Vec<Option<u64>>, PositionError> {
    let mut pos: HashMap<usize, u64> = HashMap::new();
    let mut out = Vec::with_capacity(stream.len());
    for (i, ev) in stream.events().iter().enumerate() {
        let here = match ev.op {
            OpKind::Open => {
                pos.insert(i, 0);
                None
            }
            OpKind::Lseek => {
                let open = stream.binding(i).ok_or(PositionError::Unbound { index: i })?;
                pos.insert(open, ev.offset.unwrap_or(0));
                None
            }
            OpKind::Read | OpKind::Write => {
                let open = stream.binding(i).ok_or(PositionError::Unbound { index: i })?;
                let p = pos.entry(open).or_insert(0);
                let start = *p;
                *p = start
                    .checked_add(ev.bytes())
                    .ok_or(PositionError::PositionOverflow { index: i })?;
                Some(start)
            }
            OpKind::Close | OpKind::Meta => None,
        };
        out.push(here);
    }
    Ok(out)
}

/// Highest byte position reached by reads and writes, per opened path.
/// Paths that are opened but never read or written map to 0.
pub fn file_extents(stream: &IoStream) -> Result<BTreeMap<String, u64>, PositionError> {
    let starts = positions(stream)?;
    let mut extents = BTreeMap::new();
    for (i, ev) in stream.events().iter().enumerate() {
        let Some(path) = stream.path_of(i) else { continue };
        let reach = starts[i].map(|s| s + ev.bytes()).unwrap_or(0);
        let slot = extents.entry(path.to_string()).or_insert(0);
        *slot = (*slot).max(reach);
    }
    Ok(extents)
}
