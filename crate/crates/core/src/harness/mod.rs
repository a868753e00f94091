//! Scenario configs, repetitions, sweeps and CSV metrics.

pub mod config;
pub mod experiment;
pub mod metrics;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{calibrate, oracle, placement, run_experiment, run_repetition, sweep, ExperimentError, SweepTable};
pub use metrics::{link_utilization_distribution, memory_occupancy_model, MetricsReport, RunRow};
