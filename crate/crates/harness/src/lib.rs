//! Experiment harness for loss adapted plasticity: configuration, datasets,
//! seeded training runs, sweeps and the walker simulation export.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod sweep;
pub mod walkers;

pub use config::{load_config, BlobSpec, DatasetConfig, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, run_seed, MetricsRecord, RunOutput, TraceRow};
pub use sweep::{sweep, SweepRow};
