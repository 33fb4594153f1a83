use std::collections::HashMap;

use rand::Rng;

use itb_core::trace::{IoStream, Mode, TraceEvent};

const PATHS: [&str; 4] = ["/data/a", "/data/b,c", "/q\"uote\"", "rel/x y"];

/// A valid stream built from random choices: ops needing a descriptor open
/// one first when their process has none. Start times never decrease in
/// generation order, so descriptor liveness holds in time order too.
pub fn random_stream(rng: &mut impl Rng, n: usize) -> IoStream {
    let mut events = Vec::with_capacity(n);
    let mut now = 0u64;
    let mut busy_until: HashMap<(u32, u32), u64> = HashMap::new();
    let mut live: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut next_fd = 3;
    let stream_id = rng.random_range(0..4);
    while events.len() < n {
        let pid = rng.random_range(1..=2);
        let tid = rng.random_range(1..=3);
        let t = busy_until.entry((pid, tid)).or_insert(0);
        let start = now.max(*t) + rng.random_range(0..3_000);
        let end = start + rng.random_range(0..2_000);
        *t = end;
        now = start;
        let fds = live.entry(pid).or_default();
        let ev = match (rng.random_range(0..6), fds.is_empty()) {
            (0, _) | (_, true) => {
                let fd = next_fd;
                next_fd += 1;
                fds.push(fd);
                TraceEvent::open(fd, PATHS[rng.random_range(0..PATHS.len())])
            }
            (1, false) => TraceEvent::close(fds.swap_remove(rng.random_range(0..fds.len()))),
            (2, false) => TraceEvent::read(fds[rng.random_range(0..fds.len())], rng.random_range(0..100_000)),
            (3, false) => TraceEvent::write(fds[rng.random_range(0..fds.len())], rng.random_range(0..100_000)),
            (4, false) => TraceEvent::lseek(fds[rng.random_range(0..fds.len())], rng.random_range(0..1 << 30)),
            (_, false) => TraceEvent::meta(fds[rng.random_range(0..fds.len())]),
        };
        events.push(ev.stream(stream_id).thread(pid, tid).at(start, end));
    }
    IoStream::from_events(events, Mode::Strict).expect("generated stream is valid")
}
