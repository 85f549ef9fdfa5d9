//! Experiment runner for the fractal lattice cascade: configuration, the
//! experiment registry, parallel kernel sampling and reproducible output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod registry;
pub mod sampling;

pub use config::{ExperimentConfig, Preset};
pub use error::{Error, Result};
pub use experiments::run_experiment;
pub use output::{emit, RunOutput};
pub use sampling::Runner;
