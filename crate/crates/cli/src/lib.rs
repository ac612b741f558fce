//! File formats, experiment runner and command-line front end for
//! `bethe-core`.

pub mod config;
pub mod experiment;
pub mod io;
pub mod report;
pub mod seeds;

pub use config::{ExperimentConfig, ExperimentKind, Method, Profile};
pub use experiment::{
    run_crf_experiment, run_grid_experiment, run_strength_sweep, ExperimentReport,
};
