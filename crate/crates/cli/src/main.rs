//! `itb`: generate, ingest, replay, simulate and report on IO traces.

mod cmd;
mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use itb_core::metrics::Format;
use itb_core::sim::{Placement, SigmaBasis};
use itb_core::stats::Estimator;

#[derive(Parser, Debug)]
#[command(
    name = "itb",
    version,
    about = "Trace-driven IO benchmarking and placement simulation"
)]
pub struct Cli {
    /// Seed for every random choice (generation, start offsets, dummy data).
    #[arg(long, global = true, env = "ITB_SEED", default_value_t = 0)]
    pub seed: u64,

    /// More log output (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Reject traces that need repair and stop replay at the first failed op.
    #[arg(long, global = true)]
    pub strict: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Validate a trace, write it back in canonical form and print its profile.
    Ingest(IngestArgs),
    /// Replay traces against a directory and log per-op timings.
    Replay(ReplayArgs),
    /// Simulate striping over OSDs and report the load balance.
    Simulate(SimulateArgs),
    /// Summarize replay logs into run reports, repetition statistics or sweep tables.
    Report(ReportArgs),
    /// Run the stream-count by stripe-width matrix and write one joined table.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Bundled spec name (maxdb-init) or path to a key = value spec file.
    #[arg(long, default_value = "maxdb-init")]
    pub spec: String,
    /// Op mix, e.g. `read=0.2,write=0.3,lseek=0.5,meta=0`.
    #[arg(long)]
    pub op_mix: Option<String>,
    /// Payload sizes, e.g. `read=const:4096,write=lognormal-mean:8000:0.5`.
    #[arg(long)]
    pub size_model: Option<String>,
    /// Think time: `const:<dur>`, `exp:<mean>` or `empirical:<trace>`.
    #[arg(long)]
    pub think_model: Option<String>,
    #[arg(long)]
    pub files: Option<u32>,
    /// File size, e.g. `64MiB`.
    #[arg(long)]
    pub file_size: Option<String>,
    #[arg(long)]
    pub threads: Option<u32>,
    /// Number of ops drawn from the mix (opens and closes come on top).
    #[arg(long)]
    pub events: Option<u64>,
    #[arg(long)]
    pub stream_id: Option<u32>,
    /// Print the effective spec to stderr.
    #[arg(long)]
    pub print_spec: bool,
    /// Output trace; `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Input trace; `-` for stdin.
    #[arg(long)]
    pub trace: PathBuf,
    /// Write the validated (and repaired) trace here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the workload profile here instead of stdout.
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct OffsetArgs {
    /// Start-offset sidecar. Loaded if it exists, otherwise created.
    #[arg(long)]
    pub offsets: Option<PathBuf>,
    /// Upper end of the uniform start-offset interval.
    #[arg(long, default_value = "300s")]
    pub max_offset: String,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Trace files. Stream i replays trace i mod the number of traces.
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    /// Directory the files are created and accessed under.
    #[arg(long)]
    pub root: PathBuf,
    /// Number of concurrent streams (default: one per trace).
    #[arg(long)]
    pub streams: Option<usize>,
    /// `full`, `scale:<factor>` or `fast`.
    #[arg(long, default_value = "full")]
    pub pacing: String,
    /// Open files with O_SYNC.
    #[arg(long)]
    pub sync_writes: bool,
    /// Draw start offsets uniformly from [0, max-offset] (default: all streams start at 0).
    #[arg(long)]
    pub random_offsets: bool,
    #[command(flatten)]
    pub offsets: OffsetArgs,
    /// Upper bound on worker threads.
    #[arg(long, default_value_t = itb_core::replay::DEFAULT_MAX_WORKERS)]
    pub workers: usize,
    /// Skip creating the dummy files.
    #[arg(long)]
    pub no_prepare: bool,
    /// Run every recorded process in its own OS process.
    #[arg(long)]
    pub process_per_pid: bool,
    /// Replay log output; `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long, hide = true, value_parser = common::parse_only)]
    pub only: Option<(u32, u32)>,
    #[arg(long, hide = true)]
    pub start_at_ns: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct StripeArgs {
    #[arg(long, default_value = "128KiB")]
    pub stripe_size: String,
    /// `rr` or `hash:<seed>`.
    #[arg(long, default_value = "rr")]
    pub policy: Placement,
    /// Entries above this count are active.
    #[arg(long, default_value_t = itb_core::sim::DEFAULT_THRESHOLD)]
    pub threshold: u64,
    /// `counts` (raw hit counts) or `active` (0/1 active-entry indicator).
    #[arg(long, default_value = "counts")]
    pub sigma_basis: SigmaBasis,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    #[arg(long)]
    pub streams: Option<usize>,
    /// Stripe width, i.e. number of OSDs.
    #[arg(long)]
    pub width: u32,
    #[command(flatten)]
    pub stripe: StripeArgs,
    /// Seed for the start offsets (default: --seed).
    #[arg(long)]
    pub start_seed: Option<u64>,
    /// Start every stream at 0.
    #[arg(long, conflicts_with_all = ["start_seed", "offsets"])]
    pub no_offsets: bool,
    #[command(flatten)]
    pub offsets: OffsetArgs,
    #[arg(long, default_value = "population")]
    pub estimator: Estimator,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Replay logs.
    #[arg(long, required = true, num_args = 1..)]
    pub log: Vec<PathBuf>,
    /// Treat all logs as repetitions of one run and print their statistics.
    #[arg(long)]
    pub stats: bool,
    #[arg(long, default_value = "sample")]
    pub estimator: Estimator,
    #[arg(long, default_value = "csv")]
    pub format: Format,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Trace files to superimpose. Without traces, streams are generated from --spec.
    #[arg(long, num_args = 1..)]
    pub trace: Vec<PathBuf>,
    #[arg(long, default_value = "maxdb-init")]
    pub spec: String,
    /// Ops per generated stream.
    #[arg(long, default_value_t = 10_000)]
    pub events: u64,
    /// Override a generator field, `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8,10,12")]
    pub streams: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,4,8")]
    pub widths: Vec<u32>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[command(flatten)]
    pub stripe: StripeArgs,
    #[command(flatten)]
    pub offsets: OffsetArgs,
    /// Replay target directory (required unless --simulate-only).
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long, default_value = "fast")]
    pub pacing: String,
    #[arg(long)]
    pub sync_writes: bool,
    /// Only run the placement simulation.
    #[arg(long)]
    pub simulate_only: bool,
    #[arg(long, default_value = "sample")]
    pub estimator: Estimator,
    #[arg(long, default_value = "csv")]
    pub format: Format,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cmd::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match common::domain_name(&e) {
                Some(name) => eprintln!("error[{name}]: {e:#}"),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::from(1)
        }
    }
}
