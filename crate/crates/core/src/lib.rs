//! IO trace benchmarking toolkit.
//!
//! - [`trace`]: canonical trace model, text format, think times and workload mix
//! - [`synth`]: seeded synthetic trace generation
//! - [`replay`]: per-thread replay against a directory with timing capture
//! - [`sim`]: striping/placement simulation and OSD load-balance metrics
//! - [`metrics`]: run summaries, repetition statistics and report tables

pub mod metrics;
pub mod offsets;
pub mod replay;
pub mod sim;
pub mod stats;
pub mod synth;
pub mod trace;
