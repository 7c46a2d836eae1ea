//! Command-line experiment runner for the MCGA particle solvers: resolves
//! configuration, runs the experiments and writes plot-ready result files.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{Experiment, ExperimentConfig, ModeSelection};
pub use experiments::{run, RunContext};
