//! Experiment execution: seeded realizations, sweeps and map generation.

use std::sync::Once;
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::architectures::{AnalogStage, Architecture};
use crate::channel::{build_channels, ChannelSet};
use crate::geometry::{build_scenario, ScenarioGeometry, Vec3};
use crate::init::{
    evaluate_permutations, init_fully_digital, init_hybrid, init_its, InitSettings, InitialPoint,
};
use crate::power::total_power;
use crate::sca::{sca_optimize, BeamformingSolution, ScaSettings};

use super::config::{
    derive_seed, resolve, ExperimentConfig, FocusRule, ResolvedConfig, RunMode, SweepAxis,
};
use super::results::{
    aggregate_records, ExperimentSet, FailureRecord, FieldMap, MapPlane, ResultRecord, TraceRow,
};
use super::ExperimentError;

/// Runs one experiment end to end; records are ordered by sweep point,
/// realization and architecture, so identical configurations produce
/// identical result sets regardless of the worker count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSet, ExperimentError> {
    let resolved = resolve(config)?;
    single_threaded_blas();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    pool.install(|| match config.mode {
        RunMode::Standard => run_standard(&resolved),
        RunMode::InitStudy => run_init_study(&resolved),
        RunMode::FieldMaps => run_field_maps(&resolved),
    })
}

/// The linear-algebra backend must not spawn its own threads: reductions
/// would lose bitwise determinism across worker counts.
fn single_threaded_blas() {
    static BLAS_GUARD: Once = Once::new();
    BLAS_GUARD.call_once(|| {
        if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
            std::env::set_var("OPENBLAS_NUM_THREADS", "1");
        }
    });
}

fn run_standard(resolved: &ResolvedConfig) -> Result<ExperimentSet, ExperimentError> {
    let config = &resolved.config;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (sweep_index, sweep_value, point_config) in sweep_points(config) {
        let point = resolve(&point_config)?;
        let outcomes: Vec<Vec<Result<ResultRecord, FailureRecord>>> = (0..config.realizations)
            .into_par_iter()
            .map(|realization| run_realization(&point, sweep_index, sweep_value, realization))
            .collect();
        for realization in outcomes {
            for outcome in realization {
                match outcome {
                    Ok(record) => records.push(record),
                    Err(failure) => failures.push(failure),
                }
            }
        }
    }
    check_failure_budget(config, &failures)?;
    let aggregates = aggregate_records(&records, &failures);
    Ok(ExperimentSet {
        config: config.clone(),
        records,
        failures,
        aggregates,
        traces: Vec::new(),
        maps: Vec::new(),
    })
}

/// Expands the sweep axis into per-point configurations. Without a sweep the
/// single point carries value 0.
fn sweep_points(config: &ExperimentConfig) -> Vec<(u64, f64, ExperimentConfig)> {
    match config.sweep {
        SweepAxis::None => vec![(0, 0.0, config.clone())],
        axis => config
            .sweep_values
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                let mut point = config.clone();
                match axis {
                    SweepAxis::N => point.n = value as usize,
                    SweepAxis::M => point.m = value as usize,
                    SweepAxis::Ell => point.ell = value as u32,
                    SweepAxis::None => unreachable!(),
                }
                (index as u64, value as f64, point)
            })
            .collect(),
    }
}

/// One seeded deployment: scenario, channels, then every architecture.
fn run_realization(
    point: &ResolvedConfig,
    sweep_index: u64,
    sweep_value: f64,
    realization: usize,
) -> Vec<Result<ResultRecord, FailureRecord>> {
    let config = &point.config;
    let seed = derive_seed(config.seed, sweep_index, realization as u64);
    let failure = |arch: Architecture, message: String| FailureRecord {
        architecture: arch,
        sweep_value,
        realization,
        seed,
        message,
    };
    let channels = build_scenario(&point.scenario_params(point.feeder_distance), seed)
        .map_err(|e| e.to_string())
        .and_then(|geometry| build_channels(&geometry, &point.radiation()).map_err(|e| e.to_string()));
    let channels = match channels {
        Ok(channels) => channels,
        Err(message) => {
            return config
                .architectures
                .iter()
                .map(|&arch| Err(failure(arch, message.clone())))
                .collect();
        }
    };
    config
        .architectures
        .iter()
        .map(|&arch| {
            run_architecture(point, &channels, arch)
                .map(|(solution, wall_ms)| {
                    build_record(point, arch, sweep_value, realization, seed, solution, wall_ms)
                })
                .map_err(|message| failure(arch, message))
        })
        .collect()
}

/// Initialization plus optimization for one architecture, timed.
fn run_architecture(
    point: &ResolvedConfig,
    channels: &ChannelSet,
    arch: Architecture,
) -> Result<(BeamformingSolution, f64), String> {
    let config = &point.config;
    let start = Instant::now();
    let effective_gain = point.effective_gain(arch).map_err(|e| e.to_string())?;
    let targets = point.targets();
    let power = point.power_model();
    let init_settings = InitSettings {
        cluster_rule: config.cluster_rule,
        permutation_cap: config.permutation_cap as u128,
        ..InitSettings::default()
    };
    let (analog, precoders) = if config.k == 0 {
        trivial_start(arch, config.m, config.n)
    } else {
        let init = match arch {
            Architecture::Its => {
                init_its(channels, &targets, effective_gain, &power.doherty, &init_settings)
                    .map_err(|e| e.to_string())?
                    .point
            }
            Architecture::FullyDigital => {
                init_fully_digital(channels, &targets, &power.doherty, &init_settings)
                    .map_err(|e| e.to_string())?
            }
            Architecture::HybridFullyConnected | Architecture::HybridPartiallyConnected => {
                init_hybrid(channels, arch, &targets, effective_gain, &power.doherty, &init_settings)
                    .map_err(|e| e.to_string())?
            }
        };
        (init.analog, init.precoders)
    };
    let solution = sca_optimize(
        arch,
        channels,
        &analog,
        &precoders,
        &targets,
        effective_gain,
        &power,
        &sca_settings(config),
    )
    .map_err(|e| e.to_string())?;
    Ok((solution, start.elapsed().as_secs_f64() * 1e3))
}

fn sca_settings(config: &ExperimentConfig) -> ScaSettings {
    ScaSettings {
        max_iterations: config.max_iterations,
        convergence_threshold: config.convergence_threshold,
        ..ScaSettings::default()
    }
}

/// Shape-correct all-zero start used when there is nothing to deliver.
fn trivial_start(
    arch: Architecture,
    elements: usize,
    chains: usize,
) -> (AnalogStage, Vec<DVector<Complex64>>) {
    let analog = match arch {
        Architecture::Its => {
            AnalogStage::Phases(DVector::from_element(elements, Complex64::new(1.0, 0.0)))
        }
        Architecture::FullyDigital => AnalogStage::None,
        Architecture::HybridFullyConnected | Architecture::HybridPartiallyConnected => {
            AnalogStage::Matrix(nalgebra::DMatrix::zeros(elements, chains))
        }
    };
    (analog, Vec::new())
}

/// Static (precoder-independent) consumption of one architecture.
fn static_power(point: &ResolvedConfig, arch: Architecture) -> f64 {
    let power = point.power_model();
    total_power(arch, &[], &power.doherty, &power.statics, &power.its, point.config.m)
        .expect("zero chain powers cannot saturate")
}

fn build_record(
    point: &ResolvedConfig,
    arch: Architecture,
    sweep_value: f64,
    realization: usize,
    seed: u64,
    solution: BeamformingSolution,
    wall_ms: f64,
) -> ResultRecord {
    let offset = static_power(point, arch);
    ResultRecord {
        experiment: point.config.experiment.clone(),
        architecture: arch,
        sweep_value,
        realization,
        seed,
        total_power_w: solution.total_power_w,
        total_power_dbw: 10.0 * solution.total_power_w.log10(),
        min_received_power_w: if solution.received_powers.is_empty() {
            0.0
        } else {
            solution.received_powers.iter().cloned().fold(f64::INFINITY, f64::min)
        },
        iterations: solution.iterations,
        wall_ms,
        received_powers: solution.received_powers.clone(),
        objective_trace: solution.trace.iter().map(|r| r.objective_w + offset).collect(),
    }
}

/// More than a fifth of the realizations failing in any cell fails the
/// whole experiment.
fn check_failure_budget(
    config: &ExperimentConfig,
    failures: &[FailureRecord],
) -> Result<(), ExperimentError> {
    for failure in failures {
        let cell_failures = failures
            .iter()
            .filter(|f| {
                f.architecture == failure.architecture && f.sweep_value == failure.sweep_value
            })
            .count();
        if cell_failures * 5 > config.realizations {
            return Err(ExperimentError::TooManyFailures {
                architecture: failure.architecture,
                sweep_value: failure.sweep_value,
                failures: cell_failures,
                realizations: config.realizations,
            });
        }
    }
    Ok(())
}

/// Convergence study: every cluster assignment becomes its own optimization
/// start; traces carry the total consumption per iteration, the result
/// record follows the lowest-starting-power assignment.
fn run_init_study(resolved: &ResolvedConfig) -> Result<ExperimentSet, ExperimentError> {
    let config = &resolved.config;
    let power = resolved.power_model();
    let targets = resolved.targets();
    let effective_gain = resolved
        .effective_gain(Architecture::Its)
        .map_err(|e| ExperimentError::Run(e.to_string()))?;
    let init_settings = InitSettings {
        cluster_rule: config.cluster_rule,
        permutation_cap: config.permutation_cap as u128,
        ..InitSettings::default()
    };
    let offset = static_power(resolved, Architecture::Its);

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut traces = Vec::new();
    for realization in 0..config.realizations {
        let seed = derive_seed(config.seed, 0, realization as u64);
        let start = Instant::now();
        let geometry = build_scenario(&resolved.scenario_params(resolved.feeder_distance), seed)
            .map_err(|e| ExperimentError::Run(e.to_string()))?;
        let channels = build_channels(&geometry, &resolved.radiation())
            .map_err(|e| ExperimentError::Run(e.to_string()))?;
        let study =
            evaluate_permutations(&channels, &targets, effective_gain, &power.doherty, &init_settings)
                .map_err(|e| ExperimentError::Run(e.to_string()))?;

        let runs: Vec<Option<(InitialPoint, BeamformingSolution)>> = study
            .evaluations
            .par_iter()
            .map(|evaluation| {
                let point = evaluation.point.clone()?;
                let solution = sca_optimize(
                    Architecture::Its,
                    &channels,
                    &point.analog,
                    &point.precoders,
                    &targets,
                    effective_gain,
                    &power,
                    &sca_settings(config),
                )
                .map_err(|e| log::warn!("assignment {:?} failed: {e}", evaluation.assignment))
                .ok()?;
                Some((point, solution))
            })
            .collect();

        let mut winner: Option<(f64, usize)> = None;
        for (index, run) in runs.iter().enumerate() {
            let Some((point, solution)) = run else { continue };
            let assignment = study.evaluations[index].assignment.clone();
            traces.push(TraceRow {
                realization,
                permutation: index,
                assignment: assignment.clone(),
                start_power_w: point.hpa_power_w + offset,
                iteration: 0,
                objective_w: point.hpa_power_w + offset,
            });
            for record in &solution.trace {
                traces.push(TraceRow {
                    realization,
                    permutation: index,
                    assignment: assignment.clone(),
                    start_power_w: point.hpa_power_w + offset,
                    iteration: record.iteration,
                    objective_w: record.objective_w + offset,
                });
            }
            let better = winner.map_or(true, |(best, _)| point.hpa_power_w < best);
            if better {
                winner = Some((point.hpa_power_w, index));
            }
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        match winner {
            Some((_, index)) => {
                let (_, solution) = runs[index].as_ref().unwrap();
                records.push(build_record(
                    resolved,
                    Architecture::Its,
                    0.0,
                    realization,
                    seed,
                    solution.clone(),
                    wall_ms,
                ));
            }
            None => failures.push(FailureRecord {
                architecture: Architecture::Its,
                sweep_value: 0.0,
                realization,
                seed,
                message: "every cluster assignment failed".into(),
            }),
        }
    }
    check_failure_budget(config, &failures)?;
    let aggregates = aggregate_records(&records, &failures);
    Ok(ExperimentSet {
        config: config.clone(),
        records,
        failures,
        aggregates,
        traces,
        maps: Vec::new(),
    })
}

/// Near-field maps: one run per feeder distance, then jointly normalized
/// incident-power and received-power maps.
fn run_field_maps(resolved: &ResolvedConfig) -> Result<ExperimentSet, ExperimentError> {
    let config = &resolved.config;
    let power = resolved.power_model();
    let targets = resolved.targets();
    let effective_gain = resolved
        .effective_gain(Architecture::Its)
        .map_err(|e| ExperimentError::Run(e.to_string()))?;
    let init_settings = InitSettings {
        cluster_rule: config.cluster_rule,
        permutation_cap: config.permutation_cap as u128,
        ..InitSettings::default()
    };

    let mut records = Vec::new();
    let mut maps = Vec::new();
    for (index, &distance) in config.feeder_distances.iter().enumerate() {
        let seed = derive_seed(config.seed, index as u64, 0);
        let start = Instant::now();
        let geometry = build_scenario(&resolved.scenario_params(distance), seed)
            .map_err(|e| ExperimentError::Run(e.to_string()))?;
        let channels = build_channels(&geometry, &resolved.radiation())
            .map_err(|e| ExperimentError::Run(e.to_string()))?;
        let init = init_its(&channels, &targets, effective_gain, &power.doherty, &init_settings)
            .map_err(|e| ExperimentError::Run(format!("distance {distance} m: {e}")))?;
        let solution = match config.focus {
            FocusRule::Sca => sca_optimize(
                Architecture::Its,
                &channels,
                &init.point.analog,
                &init.point.precoders,
                &targets,
                effective_gain,
                &power,
                &sca_settings(config),
            )
            .map_err(|e| ExperimentError::Run(format!("distance {distance} m: {e}")))?,
            FocusRule::Conjugate => conjugate_solution(resolved, &channels, &init.point, effective_gain)
                .map_err(ExperimentError::Run)?,
        };
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;

        maps.push(surface_map(resolved, &geometry, &channels, &solution, distance));
        maps.push(device_map(resolved, &geometry, &solution, distance).map_err(ExperimentError::Run)?);
        records.push(build_record(
            resolved,
            Architecture::Its,
            distance,
            0,
            seed,
            solution,
            wall_ms,
        ));
    }

    // Joint normalization per plane kind: the brightest sample across all
    // feeder distances becomes exactly 1.
    for plane in [MapPlane::Surface, MapPlane::Device] {
        let peak = maps
            .iter()
            .filter(|m| m.plane == plane)
            .flat_map(|m| m.values.iter().cloned())
            .fold(0.0f64, f64::max);
        if peak > 0.0 {
            for map in maps.iter_mut().filter(|m| m.plane == plane) {
                for value in &mut map.values {
                    *value /= peak;
                }
            }
        }
    }

    let aggregates = aggregate_records(&records, &[]);
    Ok(ExperimentSet {
        config: config.clone(),
        records,
        failures: Vec::new(),
        aggregates,
        traces: Vec::new(),
        maps,
    })
}

/// Focused point without refinement: cluster-aligned phases and min-max
/// precoders straight from the initializer.
fn conjugate_solution(
    resolved: &ResolvedConfig,
    channels: &ChannelSet,
    point: &InitialPoint,
    effective_gain: f64,
) -> Result<BeamformingSolution, String> {
    let power = resolved.power_model();
    let received = crate::architectures::received_powers(
        Architecture::Its,
        channels,
        &point.analog,
        &point.precoders,
        effective_gain,
    )
    .map_err(|e| e.to_string())?;
    let chain_powers =
        crate::power::chain_output_powers(&point.precoders, power.doherty.gain);
    let total = total_power(
        Architecture::Its,
        &chain_powers,
        &power.doherty,
        &power.statics,
        &power.its,
        resolved.config.m,
    )
    .map_err(|e| e.to_string())?;
    Ok(BeamformingSolution {
        architecture: Architecture::Its,
        analog: point.analog.clone(),
        precoders: point.precoders.clone(),
        chain_powers,
        received_powers: received,
        total_power_w: total,
        iterations: 0,
        converged: true,
        stopped_early: None,
        trace: Vec::new(),
        modulus_slack: 0.0,
        diagnostics: Vec::new(),
    })
}

/// Incident power over the surface elements, `g |(A b)_m|^2` summed over
/// precoders, sampled at each element position.
fn surface_map(
    resolved: &ResolvedConfig,
    geometry: &ScenarioGeometry,
    channels: &ChannelSet,
    solution: &BeamformingSolution,
    distance: f64,
) -> FieldMap {
    let gain = resolved.config.g;
    let mut values = vec![0.0; channels.element_count()];
    for precoder in &solution.precoders {
        let incident = &channels.feeder_to_its * precoder;
        for (value, amplitude) in values.iter_mut().zip(incident.iter()) {
            *value += gain * amplitude.norm_sqr();
        }
    }
    FieldMap {
        plane: MapPlane::Surface,
        feeder_distance: distance,
        points: geometry.its.positions.iter().map(|p| (p.x, p.y)).collect(),
        values,
    }
}

/// Received power over a square grid on the device plane.
fn device_map(
    resolved: &ResolvedConfig,
    geometry: &ScenarioGeometry,
    solution: &BeamformingSolution,
    distance: f64,
) -> Result<FieldMap, String> {
    let config = &resolved.config;
    let plane_z = config.device_position.expect("validated for field maps")[2];
    let resolution = config.map_resolution;
    let extent = config.map_extent;
    let coordinate = |i: usize| -> f64 {
        -extent + 2.0 * extent * i as f64 / (resolution - 1) as f64
    };
    let mut points = Vec::with_capacity(resolution * resolution);
    let mut probes = Vec::with_capacity(resolution * resolution);
    for yi in 0..resolution {
        for xi in 0..resolution {
            let (x, y) = (coordinate(xi), coordinate(yi));
            points.push((x, y));
            probes.push(Vec3::new(x, y, plane_z));
        }
    }
    // Probe channels reuse the scenario geometry with the grid as devices.
    let mut probe_geometry = geometry.clone();
    probe_geometry.devices = probes;
    let probe_channels = build_channels(&probe_geometry, &resolved.radiation())
        .map_err(|e| e.to_string())?;

    let AnalogStage::Phases(phases) = &solution.analog else {
        return Err("device maps need a surface solution".into());
    };
    let effective_gain = resolved.effective_gain(Architecture::Its).map_err(|e| e.to_string())?;
    let values: Vec<f64> = (0..probe_channels.device_count())
        .map(|p| {
            let eff = crate::channel::effective_channel(
                &probe_channels.device_channel(p),
                phases,
                &probe_channels.feeder_to_its,
            )
            .expect("probe shapes match the scenario");
            effective_gain
                * solution.precoders.iter().map(|b| eff.dotc(b).norm_sqr()).sum::<f64>()
        })
        .collect();
    Ok(FieldMap { plane: MapPlane::Device, feeder_distance: distance, points, values })
}
