//! Experiment front-end: configuration, the gen → estimate → attack
//! pipeline, one-at-a-time sweeps, and report aggregation.
//!
//! Every command writes into one run directory and records each artifact
//! with its SHA-256 and config digest in `manifest.json`. CSV artifacts
//! also carry the digest as their last column.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod sweep;

pub use config::{DataSource, ExperimentConfig};
pub use pipeline::{cmd_attack, cmd_estimate, cmd_gen};
pub use report::cmd_report;
pub use sweep::cmd_sweep;
