use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};

use itb_core::metrics::{self, SweepKey, SweepRun};
use itb_core::offsets::StartOffsets;
use itb_core::replay::{self, Pacing, ReplayLog, ReplayPlan};
use itb_core::sim::{self, BalanceOptions, BalanceReport, StripeConfig};
use itb_core::stats::format_float;
use itb_core::synth::{self, GenSpec};
use itb_core::trace::{self, IoStream};

use crate::common::{self, load_traces, open_out, replicate, resolve_offsets};
use crate::{Cli, Command, GenArgs, IngestArgs, ReplayArgs, ReportArgs, SimulateArgs, StripeArgs, SweepArgs};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => gen(cli, a).context("gen"),
        Command::Ingest(a) => ingest(cli, a).context("ingest"),
        Command::Replay(a) => replay_cmd(cli, a).context("replay"),
        Command::Simulate(a) => simulate(cli, a).context("simulate"),
        Command::Report(a) => report(a).context("report"),
        Command::Sweep(a) => sweep(cli, a).context("sweep"),
    }
}

fn base_spec(name: &str) -> Result<GenSpec> {
    if let Some(s) = GenSpec::bundled(name) {
        return Ok(s);
    }
    let path = Path::new(name);
    if !path.exists() {
        bail!(
            "`{name}` is neither a bundled spec ({}) nor a file",
            synth::BUNDLED.join(", ")
        );
    }
    let text = common::read_input(path)?;
    Ok(GenSpec::from_config(&text, GenSpec::maxdb_init())?)
}

fn gen(cli: &Cli, a: &GenArgs) -> Result<()> {
    let mut spec = base_spec(&a.spec)?;
    let overrides = [
        ("op_mix", a.op_mix.clone()),
        ("size_model", a.size_model.clone()),
        ("think_model", a.think_model.clone()),
        ("n_files", a.files.map(|v| v.to_string())),
        ("file_size_bytes", a.file_size.clone()),
        ("n_threads", a.threads.map(|v| v.to_string())),
        ("n_events", a.events.map(|v| v.to_string())),
        ("stream_id", a.stream_id.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            spec.set(key, &v)?;
        }
    }
    spec.seed = cli.seed;
    if a.print_spec {
        eprint!("{spec}");
    }
    let stream = synth::generate(&spec)?;
    let mut out = open_out(&a.out)?;
    trace::serialize_trace(&stream, &mut out)?;
    log::info!("generated {} events", stream.len());
    Ok(())
}

fn ingest(cli: &Cli, a: &IngestArgs) -> Result<()> {
    let stream = common::load_trace(&a.trace, cli.strict)?;
    if let Some(path) = &a.out {
        trace::serialize_trace(&stream, open_out(path)?)?;
    }
    let profile = trace::characterize(&stream)?;
    let think = trace::derive_think_times(&stream);
    let mut out = open_out(a.profile.as_deref().unwrap_or(Path::new("-")))?;
    writeln!(
        out,
        "# events={} threads={}",
        profile.total_events(),
        stream.thread_count()
    )?;
    writeln!(
        out,
        "# think_gaps={} think_total_ns={}",
        think.all_gaps().count(),
        think.all_gaps().map(u128::from).sum::<u128>()
    )?;
    writeln!(out, "op,count,fraction,total_bytes,mean_bytes")?;
    for (kind, k) in profile.iter() {
        writeln!(
            out,
            "{kind},{},{},{},{}",
            k.count,
            format_float(k.fraction),
            k.total_bytes,
            k.mean_bytes.map(format_float).unwrap_or_default()
        )?;
    }
    out.flush()?;
    Ok(())
}

fn replay_cmd(cli: &Cli, a: &ReplayArgs) -> Result<()> {
    let streams = replicate(&load_traces(&a.trace, cli.strict)?, a.streams);
    let offsets = resolve_offsets(&a.offsets, streams.len(), cli.seed, a.random_offsets)?;
    let mut plan = ReplayPlan::new(&a.root);
    for (i, s) in streams.into_iter().enumerate() {
        plan = plan.stream(s, offsets.get(i).unwrap_or(0));
    }
    plan.sync_writes = a.sync_writes;
    plan.pacing = a.pacing.parse()?;
    plan.seed = cli.seed;
    plan.strict = cli.strict;
    plan.max_workers = a.workers;
    plan.only = a.only;
    plan.start_at = a.start_at_ns.map(|ns| UNIX_EPOCH + Duration::from_nanos(ns));

    if !a.no_prepare && a.only.is_none() {
        let pop = replay::prepare_tree(&plan)?;
        log::info!("prepared {} files, {} bytes", pop.files.len(), pop.total_bytes());
    }
    let log = if a.process_per_pid && a.only.is_none() {
        replay_per_process(cli, a, &plan, &offsets)?
    } else {
        replay::replay(&plan)?
    };
    if !log.errors.is_empty() {
        log::warn!("{} ops failed against the target", log.errors.len());
    }
    replay::write_log(&log, open_out(&a.out)?)?;
    Ok(())
}

/// Runs one child `itb replay --only <stream>:<pid>` per recorded process on
/// a shared start instant and merges their logs.
fn replay_per_process(cli: &Cli, a: &ReplayArgs, plan: &ReplayPlan, offsets: &StartOffsets) -> Result<ReplayLog> {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH)?.as_nanos();
    let dir = std::env::temp_dir().join(format!("itb-{}-{stamp}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let result = (|| {
        let sidecar = dir.join("offsets");
        offsets.save(&sidecar)?;
        let procs: BTreeSet<(u32, u32)> = plan
            .streams
            .iter()
            .flat_map(|(s, _)| s.threads().keys().map(move |k| (s.stream_id(), k.pid)))
            .collect();
        let start = SystemTime::now() + Duration::from_millis(300);
        let start_ns = start.duration_since(UNIX_EPOCH)?.as_nanos() as u64;
        let exe = std::env::current_exe()?;

        let mut children = Vec::new();
        for &(sid, pid) in &procs {
            let out = dir.join(format!("log-{sid}-{pid}.csv"));
            let mut cmd = Proc::new(&exe);
            cmd.arg("--seed").arg(cli.seed.to_string()).arg("replay");
            if cli.strict {
                cmd.arg("--strict");
            }
            cmd.arg("--trace").args(&a.trace);
            cmd.arg("--root").arg(&a.root);
            cmd.arg("--streams").arg(plan.streams.len().to_string());
            cmd.arg("--pacing").arg(&a.pacing);
            if a.sync_writes {
                cmd.arg("--sync-writes");
            }
            cmd.arg("--offsets").arg(&sidecar);
            cmd.arg("--workers").arg(a.workers.to_string());
            cmd.arg("--no-prepare");
            cmd.arg("--only").arg(format!("{sid}:{pid}"));
            cmd.arg("--start-at-ns").arg(start_ns.to_string());
            cmd.arg("--out").arg(&out);
            let child = cmd
                .spawn()
                .with_context(|| format!("spawning worker for {sid}:{pid}"))?;
            children.push((sid, pid, out, child));
        }

        let mut merged = ReplayLog {
            config: plan.config_echo(),
            ..Default::default()
        };
        for (sid, pid, out, mut child) in children {
            let status = child.wait()?;
            if !status.success() {
                bail!("worker for stream {sid} pid {pid} failed ({status})");
            }
            let part = replay::read_log(&out)?;
            merged.entries.extend(part.entries);
            merged.errors.extend(part.errors);
        }
        merged.entries.sort_by_key(|e| e.actual_start_ns);
        Ok(merged)
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result
}

fn stripe_config(s: &StripeArgs, width: u32) -> Result<StripeConfig> {
    let size = synth::parse_bytes(&s.stripe_size).with_context(|| format!("bad --stripe-size `{}`", s.stripe_size))?;
    Ok(StripeConfig::new(size, width, s.policy)?)
}

fn balance(
    streams: &[IoStream],
    offsets: &StartOffsets,
    cfg: &StripeConfig,
    opts: &BalanceOptions,
) -> Result<(Vec<sim::OsdPattern>, BalanceReport)> {
    let pairs: Vec<(&IoStream, u64)> = streams
        .iter()
        .enumerate()
        .map(|(i, s)| (s, offsets.get(i).unwrap_or(0)))
        .collect();
    let patterns = sim::build_patterns(&pairs, cfg)?;
    let report = sim::balance_report(&patterns, opts);
    Ok((patterns, report))
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let streams = replicate(&load_traces(&a.trace, cli.strict)?, a.streams);
    let offsets = if a.no_offsets {
        StartOffsets::zero(streams.len())
    } else {
        resolve_offsets(&a.offsets, streams.len(), a.start_seed.unwrap_or(cli.seed), true)?
    };
    let cfg = stripe_config(&a.stripe, a.width)?;
    let opts = BalanceOptions {
        threshold: a.stripe.threshold,
        estimator: a.estimator,
        basis: a.stripe.sigma_basis,
    };
    let (patterns, report) = balance(&streams, &offsets, &cfg, &opts)?;
    sim::write_report(open_out(&a.out)?, &cfg, &patterns, &report)?;
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &a.log {
        let log = replay::read_log(path).with_context(|| format!("reading {}", path.display()))?;
        let r = metrics::summarize(&log).with_context(|| format!("summarizing {}", path.display()))?;
        reports.push(r);
    }
    let out = open_out(&a.out)?;
    if a.stats {
        let stats = metrics::repetition_stats(&reports, a.estimator)?;
        metrics::emit_stats(&stats, a.format, out)?;
    } else if reports.len() == 1 {
        metrics::emit_report(&reports[0], a.format, out)?;
    } else {
        let runs: Vec<SweepRun> = reports
            .into_iter()
            .map(|r| {
                let streams = config_num(&r.config, "n_streams").unwrap_or(r.n_streams as u64) as usize;
                let width = config_num(&r.config, "width").map(|w| w as u32);
                SweepRun {
                    key: SweepKey { streams, width },
                    report: Some(r),
                    avg_sigma_read: None,
                    avg_sigma_write: None,
                }
            })
            .collect();
        let table = metrics::sweep_table(&runs, a.estimator)?;
        metrics::emit_sweep(&table, a.format, out)?;
    }
    Ok(())
}

fn config_num(config: &[(String, String)], key: &str) -> Option<u64> {
    config.iter().find(|(k, _)| k == key).and_then(|(_, v)| v.parse().ok())
}

fn sweep_streams(cli: &Cli, a: &SweepArgs, n: usize) -> Result<Vec<IoStream>> {
    if !a.trace.is_empty() {
        return Ok(replicate(&load_traces(&a.trace, cli.strict)?, Some(n)));
    }
    let mut base = base_spec(&a.spec)?;
    base.n_events = a.events;
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects key=value, got `{kv}`"))?;
        base.set(k.trim(), v.trim())?;
    }
    (0..n)
        .map(|i| {
            let mut spec = base.clone();
            spec.seed = cli.seed.wrapping_add(i as u64);
            spec.stream_id = i as u32;
            Ok(synth::generate(&spec)?)
        })
        .collect()
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    if a.streams.is_empty() || a.widths.is_empty() || a.reps == 0 {
        bail!("--streams, --widths and --reps must be non-empty");
    }
    let root: Option<PathBuf> = match (&a.root, a.simulate_only) {
        (_, true) => None,
        (Some(r), false) => Some(r.clone()),
        (None, false) => bail!("--root is required unless --simulate-only is given"),
    };
    let pacing: Pacing = a.pacing.parse()?;
    let max_k = *a.streams.iter().max().expect("non-empty");
    let pool = sweep_streams(cli, a, max_k)?;
    let offsets = resolve_offsets(&a.offsets, max_k, cli.seed, true)?;

    let mut runs = Vec::new();
    for &k in &a.streams {
        let sub = &pool[..k];
        let plan = root.as_ref().map(|root| {
            let mut plan = ReplayPlan::new(root);
            for (i, s) in sub.iter().enumerate() {
                plan = plan.stream(s.clone(), offsets.get(i).unwrap_or(0));
            }
            plan.sync_writes = a.sync_writes;
            plan.pacing = pacing;
            plan.seed = cli.seed;
            plan.strict = cli.strict;
            plan
        });
        if let Some(plan) = &plan {
            replay::prepare_tree(plan)?;
        }
        for &w in &a.widths {
            let cfg = stripe_config(&a.stripe, w)?;
            let opts = BalanceOptions {
                threshold: a.stripe.threshold,
                basis: a.stripe.sigma_basis,
                ..Default::default()
            };
            let (_, bal) = balance(sub, &offsets, &cfg, &opts)?;
            for rep in 0..a.reps {
                let report = match &plan {
                    Some(plan) => {
                        log::info!("streams={k} width={w} rep={rep}");
                        let mut log = replay::replay(plan)?;
                        log.config.push(("width".into(), w.to_string()));
                        Some(metrics::summarize(&log)?)
                    }
                    None => None,
                };
                runs.push(SweepRun {
                    key: SweepKey {
                        streams: k,
                        width: Some(w),
                    },
                    report,
                    avg_sigma_read: bal.avg_sigma_read(),
                    avg_sigma_write: bal.avg_sigma_write(),
                });
            }
        }
    }
    let table = metrics::sweep_table(&runs, a.estimator)?;
    metrics::emit_sweep(&table, a.format, open_out(&a.out)?)?;
    Ok(())
}
