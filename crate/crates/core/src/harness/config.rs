//! Experiment configuration: schema, defaults, merging and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::architectures::Architecture;
use crate::channel::{wavelength, RadiationParams};
use crate::geometry::{ScenarioParams, Vec3};
use crate::init::ClusterRule;
use crate::power::{DohertyParams, ItsPowerParams, StaticPower};
use crate::sca::PowerModel;

/// Configuration ingestion and validation errors.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("bad override '{0}': expected key=value with a TOML value")]
    BadOverride(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
}

/// Execution mode of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Sweep × realization grid per architecture.
    Standard,
    /// Every cluster assignment becomes its own optimization start, with
    /// per-iteration traces recorded.
    InitStudy,
    /// Near-field power maps over the surface and device planes, one run
    /// per feeder distance.
    FieldMaps,
}

/// Swept parameter of a standard experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    None,
    /// Feeder chain count.
    N,
    /// Element / antenna count.
    M,
    /// Amplifier way count.
    Ell,
}

/// Phase configuration used for field maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusRule {
    /// Full optimization of phases and precoder.
    Sca,
    /// Phase-conjugate focusing with min-max precoders, no refinement.
    Conjugate,
}

/// One experiment description. Field names mirror the symbol table of the
/// power and channel models; powers in watts, distances in meters, losses in
/// decibels, `f_c` in hertz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Label written into every record.
    pub experiment: String,
    /// Baseband processing power.
    pub p_bb: f64,
    /// Transceiver-chain power.
    pub p_tc: f64,
    /// Surface controller power.
    pub p_ctrl: f64,
    /// Per-element surface power.
    pub p_cell: f64,
    /// Per-device received-power target.
    pub p_th: f64,
    /// Amplifier saturation output power.
    pub p_max: f64,
    /// Feeder-antenna radiation exponent.
    pub mu: f64,
    /// Surface-element radiation exponent.
    pub kappa: f64,
    /// Peak drain efficiency.
    pub eta_max: f64,
    /// Surface power-transfer efficiency.
    pub rho_its: f64,
    /// Device count.
    pub k: usize,
    /// Element / antenna count.
    pub m: usize,
    /// Feeder chain count.
    pub n: usize,
    /// Carrier frequency.
    pub f_c: f64,
    /// Splitter insertion loss (dB).
    pub gamma_s: f64,
    /// Combiner insertion loss (dB).
    pub gamma_c: f64,
    /// Phase-shifter insertion loss (dB).
    pub gamma_p: f64,
    /// Doherty way count.
    pub ell: u32,
    /// Amplifier power gain (linear).
    pub g: f64,
    /// Service-area width.
    pub d_x: f64,
    /// Service-area depth.
    pub d_y: f64,
    /// Surface-to-service-area distance.
    pub d_z: f64,
    pub realizations: usize,
    pub seed: u64,
    pub architectures: Vec<Architecture>,
    pub sweep: SweepAxis,
    /// Ascending sweep values; required unless the axis is `none`.
    pub sweep_values: Vec<u64>,
    pub cluster_rule: ClusterRule,
    pub mode: RunMode,
    pub focus: FocusRule,
    /// Feeder distances for field maps; empty means the resolved default.
    pub feeder_distances: Vec<f64>,
    /// Fixed device position overriding the random drop (needs `k = 1`).
    pub device_position: Option<[f64; 3]>,
    pub max_iterations: usize,
    pub convergence_threshold: f64,
    pub permutation_cap: u64,
    /// Worker threads; 0 picks the runtime default.
    pub workers: usize,
    /// Field-map grid points per axis on the device plane.
    pub map_resolution: usize,
    /// Field-map half-extent around the axis on the device plane.
    pub map_extent: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: "custom".into(),
            p_bb: 0.2,
            p_tc: 0.1,
            p_ctrl: 1.0,
            p_cell: 0.001,
            p_th: 0.001,
            p_max: 300.0,
            mu: 10.0,
            kappa: 2.0,
            eta_max: 0.25,
            rho_its: 0.45,
            k: 4,
            m: 100,
            n: 4,
            f_c: 5e9,
            gamma_s: 0.5,
            gamma_c: 0.5,
            gamma_p: 3.5,
            ell: 2,
            g: 100.0,
            d_x: 3.0,
            d_y: 3.0,
            d_z: 5.0,
            realizations: 100,
            seed: 1,
            architectures: vec![Architecture::Its],
            sweep: SweepAxis::None,
            sweep_values: Vec::new(),
            cluster_rule: ClusterRule::Strongest,
            mode: RunMode::Standard,
            focus: FocusRule::Sca,
            feeder_distances: Vec::new(),
            device_position: None,
            max_iterations: 50,
            convergence_threshold: 1e-4,
            permutation_cap: 100_000,
            workers: 0,
            map_resolution: 61,
            map_extent: 1.0,
        }
    }
}

/// Validated configuration with the derived geometry quantities.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    /// Carrier wavelength.
    pub wavelength: f64,
    /// Element pitch, half a wavelength.
    pub spacing: f64,
    /// Feeder polygon circumradius (0 for a single chain).
    pub circumradius: f64,
    /// Default feeder distance scaling with the aperture.
    pub feeder_distance: f64,
}

/// Validates a configuration and computes the derived quantities.
pub fn resolve(config: &ExperimentConfig) -> Result<ResolvedConfig, ConfigError> {
    validate(config)?;
    let lambda = wavelength(config.f_c);
    let circumradius = if config.n == 1 {
        0.0
    } else {
        lambda / (2.0 * (std::f64::consts::PI / config.n as f64).sin())
    };
    Ok(ResolvedConfig {
        config: config.clone(),
        wavelength: lambda,
        spacing: lambda / 2.0,
        circumradius,
        feeder_distance: (lambda / 2.0) * (config.m as f64 / std::f64::consts::PI).sqrt(),
    })
}

fn validate(config: &ExperimentConfig) -> Result<(), ConfigError> {
    let err = |msg: String| Err(ConfigError::Invalid(msg));
    let positive: [(&str, f64); 8] = [
        ("p_bb", config.p_bb),
        ("p_tc", config.p_tc),
        ("p_th", config.p_th),
        ("p_max", config.p_max),
        ("f_c", config.f_c),
        ("g", config.g),
        ("d_z", config.d_z),
        ("convergence_threshold", config.convergence_threshold),
    ];
    for (name, value) in positive {
        if !(value > 0.0) || !value.is_finite() {
            return err(format!("{name} must be positive, got {value}"));
        }
    }
    let nonnegative: [(&str, f64); 6] = [
        ("p_ctrl", config.p_ctrl),
        ("p_cell", config.p_cell),
        ("gamma_s", config.gamma_s),
        ("gamma_c", config.gamma_c),
        ("gamma_p", config.gamma_p),
        ("d_x", config.d_x),
    ];
    for (name, value) in nonnegative {
        if !(value >= 0.0) || !value.is_finite() {
            return err(format!("{name} must be non-negative, got {value}"));
        }
    }
    if !(config.d_y >= 0.0) || !config.d_y.is_finite() {
        return err(format!("d_y must be non-negative, got {}", config.d_y));
    }
    if !(config.eta_max > 0.0 && config.eta_max <= 1.0) {
        return err(format!("eta_max must lie in (0, 1], got {}", config.eta_max));
    }
    if !(config.rho_its > 0.0 && config.rho_its <= 1.0) {
        return err(format!("rho_its must lie in (0, 1], got {}", config.rho_its));
    }
    if config.mu < 2.0 || config.kappa < 2.0 {
        return err(format!(
            "radiation exponents must be at least 2, got mu={} kappa={}",
            config.mu, config.kappa
        ));
    }
    if config.m == 0 || config.n == 0 {
        return err(format!("m and n must be positive, got m={} n={}", config.m, config.n));
    }
    if config.ell == 0 {
        return err("ell must be at least 1".into());
    }
    if config.realizations == 0 {
        return err("realizations must be at least 1".into());
    }
    if config.max_iterations == 0 {
        return err("max_iterations must be at least 1".into());
    }
    if config.architectures.is_empty() {
        return err("at least one architecture is required".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    for arch in &config.architectures {
        if !seen.insert(arch.to_string()) {
            return err(format!("architecture {arch} listed twice"));
        }
    }
    match config.sweep {
        SweepAxis::None => {
            if !config.sweep_values.is_empty() {
                return err("sweep_values given without a sweep axis".into());
            }
        }
        _ => {
            if config.sweep_values.is_empty() {
                return err("sweep axis set but sweep_values is empty".into());
            }
            if config.sweep_values.windows(2).any(|w| w[0] >= w[1]) {
                return err(format!(
                    "sweep_values must be strictly ascending, got {:?}",
                    config.sweep_values
                ));
            }
            if config.sweep_values.iter().any(|&v| v == 0) {
                return err("sweep_values must be positive".into());
            }
        }
    }
    if let Some(position) = config.device_position {
        if config.k != 1 {
            return err(format!("device_position requires k=1, got k={}", config.k));
        }
        if position.iter().any(|v| !v.is_finite()) {
            return err("device_position must be finite".into());
        }
    }
    match config.mode {
        RunMode::Standard => {}
        RunMode::InitStudy => {
            if config.sweep != SweepAxis::None {
                return err("init_study mode does not support sweeps".into());
            }
            if config.architectures != vec![Architecture::Its] {
                return err("init_study mode studies the surface architecture only".into());
            }
        }
        RunMode::FieldMaps => {
            if config.sweep != SweepAxis::None {
                return err("field_maps mode sweeps feeder distances, not parameters".into());
            }
            if config.n != 1 || config.k != 1 {
                return err(format!(
                    "field_maps mode needs n=1 and k=1, got n={} k={}",
                    config.n, config.k
                ));
            }
            if config.device_position.is_none() {
                return err("field_maps mode needs a fixed device_position".into());
            }
            if config.realizations != 1 {
                return err("field_maps mode uses a single realization".into());
            }
            if config.feeder_distances.is_empty() {
                return err("field_maps mode needs at least one feeder distance".into());
            }
            if config.feeder_distances.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
                return err("feeder distances must be positive".into());
            }
            if config.map_resolution < 2 {
                return err("map_resolution must be at least 2".into());
            }
            if !(config.map_extent > 0.0) {
                return err("map_extent must be positive".into());
            }
        }
    }
    Ok(())
}

impl ResolvedConfig {
    /// Scenario description at the given feeder distance.
    pub fn scenario_params(&self, feeder_distance: f64) -> ScenarioParams {
        let c = &self.config;
        ScenarioParams {
            element_count: c.m,
            antenna_count: c.n,
            device_count: c.k,
            spacing: self.spacing,
            circumradius: self.circumradius,
            feeder_distance,
            extent_x: c.d_x,
            extent_y: c.d_y,
            device_distance: c.d_z,
            fixed_devices: c
                .device_position
                .map(|p| vec![Vec3::new(p[0], p[1], p[2])]),
        }
    }

    pub fn radiation(&self) -> RadiationParams {
        RadiationParams::new(self.wavelength, self.config.mu, self.config.kappa)
            .expect("validated exponents")
    }

    pub fn power_model(&self) -> PowerModel {
        let c = &self.config;
        PowerModel {
            doherty: DohertyParams::new(c.ell, c.eta_max, c.p_max, c.g)
                .expect("validated amplifier parameters"),
            statics: StaticPower { baseband_w: c.p_bb, transceiver_w: c.p_tc },
            its: ItsPowerParams { control_w: c.p_ctrl, element_w: c.p_cell },
        }
    }

    /// Architecture-specific effective gain between precoder energy and
    /// received power, folding the surface efficiency or network loss.
    pub fn effective_gain(&self, arch: Architecture) -> Result<f64, crate::power::PowerError> {
        let c = &self.config;
        let loss = crate::power::insertion_loss(arch, c.m, c.n, c.gamma_s, c.gamma_c, c.gamma_p)?;
        Ok(arch.effective_gain(c.g, c.rho_its, loss.linear))
    }

    pub fn targets(&self) -> Vec<f64> {
        vec![self.config.p_th; self.config.k]
    }
}

/// Loads a configuration: `base`, overlaid with the file at `path` (when
/// given), overlaid with `key=value` override strings, then validated.
pub fn load_config(
    base: &ExperimentConfig,
    path: Option<&Path>,
    overrides: &[String],
) -> Result<ExperimentConfig, ConfigError> {
    let mut merged = toml::Value::try_from(base)
        .map_err(|e| ConfigError::Parse(format!("cannot encode defaults: {e}")))?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        let file: toml::Value =
            text.parse().map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        merge_values(&mut merged, file);
    }
    for entry in overrides {
        let Some((key, raw)) = entry.split_once('=') else {
            return Err(ConfigError::BadOverride(entry.clone()));
        };
        let (key, raw) = (key.trim(), raw.trim());
        // Accept bare words (e.g. `cluster_rule=weakest`) by re-quoting when
        // the raw value is not valid on its own.
        let parsed = parse_override(key, raw)
            .or_else(|| parse_override(key, &format!("\"{raw}\"")))
            .ok_or_else(|| ConfigError::BadOverride(entry.clone()))?;
        merge_values(&mut merged, parsed);
    }
    let config: ExperimentConfig =
        merged.try_into().map_err(|e| ConfigError::Parse(e.to_string()))?;
    validate(&config)?;
    Ok(config)
}

fn parse_override(key: &str, raw: &str) -> Option<toml::Value> {
    format!("{key} = {raw}").parse::<toml::Value>().ok()
}

/// Replaces top-level keys of `base` with those of `update` (nested tables
/// are merged recursively so partial sections keep unrelated keys).
fn merge_values(base: &mut toml::Value, update: toml::Value) {
    match (base, update) {
        (toml::Value::Table(base), toml::Value::Table(update)) => {
            for (key, value) in update {
                match base.get_mut(&key) {
                    Some(existing) if existing.is_table() && value.is_table() => {
                        merge_values(existing, value);
                    }
                    _ => {
                        base.insert(key, value);
                    }
                }
            }
        }
        (base, update) => *base = update,
    }
}

/// Splittable seed derivation: the same `(master, sweep, realization)`
/// triple always maps to the same stream seed, independent of execution
/// order or worker count.
pub fn derive_seed(master: u64, sweep: u64, realization: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ sweep) ^ realization)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
