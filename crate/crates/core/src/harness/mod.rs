//! Experiment plumbing: configuration, datasets, snapshots and runners.

pub mod config;
pub mod idx;
pub mod pgm;
pub mod run;
pub mod snapshot;

pub use config::{ExperimentConfig, ExperimentKind};
pub use run::run;
pub use snapshot::WeightSnapshot;
