//! Built-in experiment presets and the CI scaling knob.

use crate::architectures::Architecture;

use super::config::{ConfigError, ExperimentConfig, FocusRule, RunMode, SweepAxis};

/// Names of the built-in presets, in documentation order.
pub const PRESET_NAMES: [&str; 5] = ["fig4", "fig5", "fig6", "fig7", "fig8"];

/// Returns the named preset configuration.
///
/// * `fig4` — convergence study: every cluster assignment of the default
///   scenario runs as its own optimization start, traces recorded.
/// * `fig5` — total power versus chain count, all architectures.
/// * `fig6` — total power versus element count, all architectures.
/// * `fig7` — total power versus amplifier way count, all architectures.
/// * `fig8` — near-field power maps for a single-chain transmitter at two
///   feeder distances.
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::default();
    config.experiment = name.to_string();
    match name {
        "fig4" => {
            config.mode = RunMode::InitStudy;
            config.realizations = 1;
        }
        "fig5" => {
            config.architectures = all_architectures();
            config.sweep = SweepAxis::N;
            config.sweep_values = (4..=10).collect();
        }
        "fig6" => {
            config.architectures = all_architectures();
            config.sweep = SweepAxis::M;
            config.sweep_values = vec![100, 144, 196, 256, 324, 400];
        }
        "fig7" => {
            config.architectures = all_architectures();
            config.sweep = SweepAxis::Ell;
            config.sweep_values = (1..=6).collect();
        }
        "fig8" => {
            config.mode = RunMode::FieldMaps;
            config.m = 400;
            config.n = 1;
            config.k = 1;
            config.realizations = 1;
            config.device_position = Some([0.0, 0.0, -1.5]);
            config.feeder_distances = vec![1.35, 0.2];
            config.focus = FocusRule::Sca;
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    }
    Ok(config)
}

fn all_architectures() -> Vec<Architecture> {
    vec![
        Architecture::Its,
        Architecture::FullyDigital,
        Architecture::HybridFullyConnected,
        Architecture::HybridPartiallyConnected,
    ]
}

/// Shrinks an experiment for CI: element counts land on the nearest perfect
/// square of `m * factor` (at least 4) and realization counts scale by the
/// same factor (at least 1). Chain counts, device counts and sweep axes
/// other than the element count are left alone.
pub fn apply_scale(config: &mut ExperimentConfig, factor: f64) -> Result<(), ConfigError> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(ConfigError::Invalid(format!("scale must be positive, got {factor}")));
    }
    config.m = nearest_square(config.m as f64 * factor);
    config.realizations = ((config.realizations as f64 * factor).ceil() as usize).max(1);
    if config.sweep == SweepAxis::M {
        let mut scaled: Vec<u64> = config
            .sweep_values
            .iter()
            .map(|&m| nearest_square(m as f64 * factor) as u64)
            .collect();
        scaled.dedup();
        config.sweep_values = scaled;
    }
    Ok(())
}

/// Nearest perfect square to `target`, never below 4.
fn nearest_square(target: f64) -> usize {
    let root = target.max(4.0).sqrt().round().max(2.0) as usize;
    root * root
}
