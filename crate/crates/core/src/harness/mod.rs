//! Experiment harness: configuration, presets, seeded execution and
//! on-disk result formats.
//!
//! A run is described by an [`ExperimentConfig`] (defaults, optionally a
//! TOML file, optionally `key=value` overrides), expanded into seeded
//! realizations by [`run_experiment`] and persisted with [`write_results`].
//! Derived seeds depend only on the master seed and each realization's
//! coordinates, so results are reproducible across worker counts.

mod config;
mod presets;
mod results;
mod run;

pub use config::{
    derive_seed, load_config, resolve, ConfigError, ExperimentConfig, FocusRule, ResolvedConfig,
    RunMode, SweepAxis,
};
pub use presets::{apply_scale, preset, PRESET_NAMES};
pub use results::{
    aggregate_records, write_results, Aggregate, ExperimentSet, FailureRecord, FieldMap, MapPlane,
    ResultRecord, TraceRow,
};
pub use run::run_experiment;

use crate::architectures::Architecture;

/// Failure of a whole experiment, as opposed to a single realization.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    /// The configuration is inconsistent.
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Result files could not be written.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// The worker pool could not be created.
    #[error("worker pool: {0}")]
    Pool(String),
    /// A cell exceeded the failed-realization budget (one fifth).
    #[error(
        "{architecture} at sweep value {sweep_value}: {failures} of {realizations} \
         realizations failed"
    )]
    TooManyFailures {
        architecture: Architecture,
        sweep_value: f64,
        failures: usize,
        realizations: usize,
    },
    /// A realization failed in a mode that cannot tolerate failures.
    #[error("{0}")]
    Run(String),
}
