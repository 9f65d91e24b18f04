//! Batch experiments over (rho, SNR, K) grids with deterministic CSV output.

mod config;
mod runner;

pub use config::{parse_list as parse_grid_list, ConfigOverrides, ExperimentConfig, ExperimentKind};
pub use runner::{
    run_detection_experiment, run_experiment, run_frobenius_sweep, run_tradeoff_sweep,
    run_training_sweep, run_utility_sweep, ExperimentContext,
};
