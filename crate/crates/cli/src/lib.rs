//! Command-line driver for the `chaosgraph` experiments.

pub mod config;
pub mod run;

pub use config::{preset, Diagnostic, Experiment, ExperimentConfig, PRESETS};
pub use run::{run, RunError, RunOutcome};
