//! Snapshot tests for the three report kinds. Set `ITB_BLESS=1` to rewrite
//! the fixtures under `tests/golden/`.

use std::path::PathBuf;

use itb_core::metrics::{self, Format, SweepKey, SweepRun};
use itb_core::replay::{LogEntry, ReplayLog};
use itb_core::stats::Estimator;
use itb_core::trace::OpKind;

fn entry(stream_id: u32, op: OpKind, bytes: u64, start_us: u64, lat_us: u64) -> LogEntry {
    LogEntry {
        stream_id,
        pid: 100,
        tid: 1,
        op,
        bytes,
        scheduled_start_ns: start_us * 1000,
        actual_start_ns: start_us * 1000 + 37,
        latency_ns: lat_us * 1000,
        wall_epoch_ns: 1_700_000_000_000_000_000 + start_us * 1000 + 37,
    }
}

fn log(streams: u32, slow: u64) -> ReplayLog {
    let mut entries = Vec::new();
    for s in 0..streams {
        entries.push(entry(s, OpKind::Open, 0, 0, 20));
        entries.push(entry(s, OpKind::Write, 8192, 100, 60 + slow));
        entries.push(entry(s, OpKind::Lseek, 0, 300, 2));
        entries.push(entry(s, OpKind::Write, 7000, 400, 45 + slow));
        entries.push(entry(s, OpKind::Read, 6884, 900, 33 + 2 * slow));
        entries.push(entry(s, OpKind::Close, 0, 1200, 20));
    }
    ReplayLog {
        config: vec![
            ("n_streams".into(), streams.to_string()),
            ("pacing".into(), "full".into()),
            ("seed".into(), "7".into()),
        ],
        entries,
        errors: vec![],
    }
}

fn check(name: &str, got: Vec<u8>) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    let got = String::from_utf8(got).unwrap();
    if std::env::var_os("ITB_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &got).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(got, want, "{name} differs from its fixture");
}

#[test]
fn run_report_csv() {
    let r = metrics::summarize(&log(2, 0)).unwrap();
    let mut out = Vec::new();
    metrics::emit_report(&r, Format::Csv, &mut out).unwrap();
    check("run_report.csv", out);
}

#[test]
fn repetition_stats_tsv() {
    let reports: Vec<_> = [0, 15, 4]
        .iter()
        .map(|&slow| metrics::summarize(&log(1, slow)).unwrap())
        .collect();
    let stats = metrics::repetition_stats(&reports, Estimator::Sample).unwrap();
    let mut out = Vec::new();
    metrics::emit_stats(&stats, Format::Tsv, &mut out).unwrap();
    check("repetition_stats.tsv", out);
}

#[test]
fn sweep_table_csv() {
    let mut runs = Vec::new();
    for streams in [1u32, 2] {
        for width in [1u32, 4] {
            for slow in [0, 9] {
                runs.push(SweepRun {
                    key: SweepKey {
                        streams: streams as usize,
                        width: Some(width),
                    },
                    report: Some(metrics::summarize(&log(streams, slow + u64::from(width))).unwrap()),
                    avg_sigma_read: Some(0.25 * f64::from(streams)),
                    avg_sigma_write: (width > 1).then(|| 1.0 / f64::from(width + streams)),
                });
            }
        }
    }
    let table = metrics::sweep_table(&runs, Estimator::Sample).unwrap();
    let mut out = Vec::new();
    metrics::emit_sweep(&table, Format::Csv, &mut out).unwrap();
    check("sweep_table.csv", out);
}
