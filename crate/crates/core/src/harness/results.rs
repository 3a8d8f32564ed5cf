//! Result records, aggregation and file persistence.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::architectures::Architecture;

use super::config::ExperimentConfig;
use super::ExperimentError;

/// Outcome of one optimization run.
#[derive(Debug, Clone)]
pub struct ResultRecord {
    pub experiment: String,
    pub architecture: Architecture,
    pub sweep_value: f64,
    pub realization: usize,
    pub seed: u64,
    pub total_power_w: f64,
    pub total_power_dbw: f64,
    pub min_received_power_w: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    /// Received power per device; not persisted to the fixed-column CSV.
    pub received_powers: Vec<f64>,
    /// Objective after each iteration; persisted for trace studies only.
    pub objective_trace: Vec<f64>,
}

/// Failed run, kept for accounting.
#[derive(Debug, Clone)]
pub struct FailureRecord {
    pub architecture: Architecture,
    pub sweep_value: f64,
    pub realization: usize,
    pub seed: u64,
    pub message: String,
}

/// Per (architecture, sweep value) summary over realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub experiment: String,
    pub architecture: Architecture,
    pub sweep_value: f64,
    pub realizations: usize,
    pub failures: usize,
    pub mean_total_power_w: f64,
    pub std_total_power_w: f64,
    pub mean_total_power_dbw: f64,
    pub mean_min_received_power_w: f64,
    pub mean_iterations: f64,
}

/// One per-iteration row of the convergence study.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub realization: usize,
    pub permutation: usize,
    /// Chain-to-device assignment, one device index per chain.
    pub assignment: Vec<usize>,
    /// Amplifier power of the starting point.
    pub start_power_w: f64,
    pub iteration: usize,
    pub objective_w: f64,
}

/// Plane sampled by a field map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapPlane {
    /// Incident power over the surface elements.
    Surface,
    /// Received power over a grid on the device plane.
    Device,
}

impl MapPlane {
    fn file_stem(self) -> &'static str {
        match self {
            MapPlane::Surface => "surface_plane",
            MapPlane::Device => "device_plane",
        }
    }
}

/// Dense power samples over one plane at one feeder distance. Values are
/// jointly normalized per plane kind across all feeder distances, so the
/// brightest sample of a kind is exactly 1.
#[derive(Debug, Clone)]
pub struct FieldMap {
    pub plane: MapPlane,
    pub feeder_distance: f64,
    /// Sample coordinates, one `(x, y)` pair per value.
    pub points: Vec<(f64, f64)>,
    pub values: Vec<f64>,
}

/// Complete output of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSet {
    pub config: ExperimentConfig,
    pub records: Vec<ResultRecord>,
    pub failures: Vec<FailureRecord>,
    pub aggregates: Vec<Aggregate>,
    pub traces: Vec<TraceRow>,
    pub maps: Vec<FieldMap>,
}

/// Builds the per-cell aggregates in record order (first-seen cell order is
/// deterministic because records are emitted in a fixed sweep × architecture
/// × realization order).
pub fn aggregate_records(
    records: &[ResultRecord],
    failures: &[FailureRecord],
) -> Vec<Aggregate> {
    let mut order: Vec<(Architecture, u64)> = Vec::new();
    let mut groups: std::collections::HashMap<(Architecture, u64), Vec<&ResultRecord>> =
        std::collections::HashMap::new();
    for record in records {
        let key = (record.architecture, record.sweep_value.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(record);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let n = members.len() as f64;
            let mean = |f: &dyn Fn(&ResultRecord) -> f64| -> f64 {
                members.iter().map(|r| f(r)).sum::<f64>() / n
            };
            let mean_power = mean(&|r| r.total_power_w);
            let variance = if members.len() > 1 {
                members
                    .iter()
                    .map(|r| (r.total_power_w - mean_power).powi(2))
                    .sum::<f64>()
                    / (n - 1.0)
            } else {
                0.0
            };
            let failures = failures
                .iter()
                .filter(|f| f.architecture == key.0 && f.sweep_value.to_bits() == key.1)
                .count();
            Aggregate {
                experiment: members[0].experiment.clone(),
                architecture: key.0,
                sweep_value: f64::from_bits(key.1),
                realizations: members.len(),
                failures,
                mean_total_power_w: mean_power,
                std_total_power_w: variance.sqrt(),
                mean_total_power_dbw: 10.0 * mean_power.log10(),
                mean_min_received_power_w: mean(&|r| r.min_received_power_w),
                mean_iterations: mean(&|r| r.iterations as f64),
            }
        })
        .collect()
}

/// Writes every artifact of an experiment into `dir`, creating it if
/// needed. Returns the paths written, `results.csv` first.
pub fn write_results(set: &ExperimentSet, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let results = dir.join("results.csv");
    let mut file = std::fs::File::create(&results)?;
    writeln!(
        file,
        "experiment,architecture,sweep_value,realization,seed,total_power_W,total_power_dBW,min_received_power_W,iterations,wall_ms"
    )?;
    for r in &set.records {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.architecture,
            r.sweep_value,
            r.realization,
            r.seed,
            r.total_power_w,
            r.total_power_dbw,
            r.min_received_power_w,
            r.iterations,
            r.wall_ms
        )?;
    }
    written.push(results);

    let aggregates = dir.join("aggregates.csv");
    let mut file = std::fs::File::create(&aggregates)?;
    writeln!(
        file,
        "experiment,architecture,sweep_value,realizations,failures,mean_total_power_W,std_total_power_W,mean_total_power_dBW,mean_min_received_power_W,mean_iterations"
    )?;
    for a in &set.aggregates {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{},{},{}",
            a.experiment,
            a.architecture,
            a.sweep_value,
            a.realizations,
            a.failures,
            a.mean_total_power_w,
            a.std_total_power_w,
            a.mean_total_power_dbw,
            a.mean_min_received_power_w,
            a.mean_iterations
        )?;
    }
    written.push(aggregates);

    if !set.traces.is_empty() {
        let traces = dir.join("traces.csv");
        let mut file = std::fs::File::create(&traces)?;
        writeln!(file, "realization,permutation,assignment,start_power_W,iteration,objective_W")?;
        for t in &set.traces {
            let assignment =
                t.assignment.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-");
            writeln!(
                file,
                "{},{},{},{},{},{}",
                t.realization, t.permutation, assignment, t.start_power_w, t.iteration, t.objective_w
            )?;
        }
        written.push(traces);
    }

    if !set.maps.is_empty() {
        let map_dir = dir.join("maps");
        std::fs::create_dir_all(&map_dir)?;
        for map in &set.maps {
            let path = map_dir.join(format!("{}_{}m.csv", map.plane.file_stem(), map.feeder_distance));
            let mut file = std::fs::File::create(&path)?;
            writeln!(file, "x,y,normalized_power")?;
            for ((x, y), value) in map.points.iter().zip(&map.values) {
                writeln!(file, "{x},{y},{value}")?;
            }
            written.push(path);
        }
    }

    if !set.failures.is_empty() {
        let failures = dir.join("failures.csv");
        let mut file = std::fs::File::create(&failures)?;
        writeln!(file, "architecture,sweep_value,realization,seed,message")?;
        for f in &set.failures {
            let message = f.message.replace([',', '\n'], ";");
            writeln!(
                file,
                "{},{},{},{},{}",
                f.architecture, f.sweep_value, f.realization, f.seed, message
            )?;
        }
        written.push(failures);
    }

    let manifest = dir.join("manifest.toml");
    let mut file = std::fs::File::create(&manifest)?;
    let config_text = toml::to_string_pretty(&set.config)
        .unwrap_or_else(|e| format!("# config serialization failed: {e}"));
    writeln!(file, "[run]")?;
    writeln!(file, "created_utc = \"{}\"", chrono::Utc::now().to_rfc3339())?;
    writeln!(file, "version = \"{}\"", env!("CARGO_PKG_VERSION"))?;
    writeln!(file, "records = {}", set.records.len())?;
    writeln!(file, "failures = {}", set.failures.len())?;
    writeln!(file)?;
    writeln!(file, "[config]")?;
    write!(file, "{config_text}")?;
    written.push(manifest);

    Ok(written)
}
