//! Synthetic scenes and experiment sweeps for refractive structure from
//! motion.

pub mod config;
pub mod experiments;
pub mod output;
pub mod scene;
pub mod selftest;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use experiments::{run_experiment, ExperimentOutput, ResultRow};
pub use output::write_outputs;
