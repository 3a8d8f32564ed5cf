//! Feasible starting points for the optimization loop.
//!
//! The surface initializer partitions the elements into one cluster per
//! feeder antenna, allocates antennas to devices with a weighted-count
//! heuristic, aligns the cluster phases for maximum-ratio transmission and
//! then sweeps every cluster-to-device assignment, scoring each candidate by
//! the amplifier consumption of its min-max-power precoders. The hybrid and
//! fully digital initializers reuse the allocation and the min-max precoder
//! stage on their own effective channels.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::architectures::{AnalogStage, Architecture};
use crate::channel::{effective_channel, ChannelError, ChannelSet};
use crate::conic::lowering::HermitianPsdBlock;
use crate::conic::{solve_sdp, AffExpr, ConicError, ProblemBuilder, SolverTolerances};
use crate::linalg::hermitian_eigen;
use crate::power::{doherty_consumption, DohertyParams};

/// Largest chain count solved as a full-size semidefinite program; larger
/// instances are restricted to the span of the effective channels.
const SDP_EXACT_LIMIT: usize = 24;

/// Relative eigenvalue threshold below which recovered precoders are dropped.
const EIGENVALUE_KEEP: f64 = 1e-9;

/// Default cap on the number of enumerated cluster assignments.
pub const DEFAULT_PERMUTATION_CAP: u128 = 100_000;

/// Errors raised while constructing a starting point.
#[derive(Debug, Error)]
pub enum InitError {
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),
    #[error("{permutations} cluster assignments exceed the cap of {cap}; reduce the chain count")]
    CombinatorialBlowup { permutations: u128, cap: u128 },
    #[error("all {evaluated} cluster assignments were infeasible")]
    AllPermutationsInfeasible { evaluated: usize },
    #[error("initialization infeasible: {0}")]
    Infeasible(String),
    #[error("precoder recovery mismatch: relative error {relative_error}")]
    RecoveryMismatch { relative_error: f64 },
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Cluster rule: which feeder antenna claims each surface element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterRule {
    /// Element joins the antenna with the largest coupling magnitude.
    Strongest,
    /// Element joins the antenna with the smallest coupling magnitude.
    Weakest,
}

/// Options of the starting-point search.
#[derive(Debug, Clone, Copy)]
pub struct InitSettings {
    pub cluster_rule: ClusterRule,
    pub permutation_cap: u128,
    pub solver: SolverTolerances,
}

impl Default for InitSettings {
    fn default() -> Self {
        Self {
            cluster_rule: ClusterRule::Strongest,
            permutation_cap: DEFAULT_PERMUTATION_CAP,
            solver: SolverTolerances::default(),
        }
    }
}

/// Cluster partition plus the chain-to-device assignment.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    /// Element indices per feeder antenna; disjoint cover of `0..M`.
    pub clusters: Vec<Vec<usize>>,
    /// Device served by each chain.
    pub assignment: Vec<usize>,
}

/// Feasible starting point of one architecture.
#[derive(Debug, Clone)]
pub struct InitialPoint {
    pub analog: AnalogStage,
    pub precoders: Vec<DVector<Complex64>>,
    /// Summed amplifier consumption at the starting point.
    pub hpa_power_w: f64,
}

/// Outcome of one evaluated cluster assignment.
#[derive(Debug, Clone)]
pub struct PermutationEvaluation {
    pub assignment: Vec<usize>,
    /// Constructed point, absent when the assignment was infeasible.
    pub point: Option<InitialPoint>,
}

/// Full assignment sweep of the surface initializer.
#[derive(Debug, Clone)]
pub struct PermutationStudy {
    pub chain_counts: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub evaluations: Vec<PermutationEvaluation>,
}

/// Surface initializer result: winning point plus per-assignment scores.
#[derive(Debug, Clone)]
pub struct ItsInit {
    pub point: InitialPoint,
    pub chain_counts: Vec<usize>,
    /// `(assignment, amplifier power)` per evaluated permutation, power
    /// absent when infeasible.
    pub diagnostics: Vec<(Vec<usize>, Option<f64>)>,
}

/// Partitions surface elements by coupling magnitude, one cluster per
/// feeder antenna. Ties go to the smallest antenna index.
pub fn cluster_its_elements(
    feeder_to_its: &DMatrix<Complex64>,
    rule: ClusterRule,
) -> Vec<Vec<usize>> {
    let (elements, antennas) = feeder_to_its.shape();
    let mut clusters = vec![Vec::new(); antennas];
    for m in 0..elements {
        let mut best = 0usize;
        let mut best_gain = feeder_to_its[(m, 0)].norm_sqr();
        for n in 1..antennas {
            let gain = feeder_to_its[(m, n)].norm_sqr();
            let better = match rule {
                ClusterRule::Strongest => gain > best_gain,
                ClusterRule::Weakest => gain < best_gain,
            };
            if better {
                best = n;
                best_gain = gain;
            }
        }
        clusters[best].push(m);
    }
    clusters
}

/// Distributes `chains` among devices: everyone starts with one chain, each
/// remaining chain goes to the device minimizing the weighted metric
/// `(N_k^2 + sum_{k' != k} N_k') * ||h_k||^2`, ties to the smallest index.
pub fn allocate_rf_chains(device_gains: &[f64], chains: usize) -> Result<Vec<usize>, InitError> {
    let devices = device_gains.len();
    if devices == 0 {
        return Err(InitError::UnsupportedConfiguration("no devices to serve".into()));
    }
    if chains < devices {
        return Err(InitError::UnsupportedConfiguration(format!(
            "{chains} chains cannot serve {devices} devices"
        )));
    }
    let mut counts = vec![1usize; devices];
    for _ in devices..chains {
        let total: usize = counts.iter().sum();
        let mut winner = 0usize;
        let mut best = f64::INFINITY;
        for (k, &count) in counts.iter().enumerate() {
            let weight = (count * count + (total - count)) as f64;
            let score = weight * device_gains[k];
            if score < best {
                best = score;
                winner = k;
            }
        }
        counts[winner] += 1;
    }
    Ok(counts)
}

/// Exact number of distinct chain-to-device assignments, `N!/(prod N_k!)`.
fn assignment_count(counts: &[usize]) -> Option<u128> {
    // Build incrementally as prod_k C(partial_sum, N_k) to stay in range.
    let mut total: u128 = 1;
    let mut placed: u128 = 0;
    for &count in counts {
        for i in 1..=count as u128 {
            placed += 1;
            total = total.checked_mul(placed)?;
            total /= i; // binomial build keeps intermediate values integral
        }
    }
    Some(total)
}

/// Enumerates every distinct assignment of devices to chain slots in
/// lexicographic order. `counts[k]` slots carry device `k`.
pub fn enumerate_assignments(counts: &[usize], cap: u128) -> Result<Vec<Vec<usize>>, InitError> {
    let total = assignment_count(counts)
        .ok_or(InitError::CombinatorialBlowup { permutations: u128::MAX, cap })?;
    if total > cap {
        return Err(InitError::CombinatorialBlowup { permutations: total, cap });
    }
    let mut current: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(device, &count)| std::iter::repeat(device).take(count))
        .collect();
    let mut all = Vec::with_capacity(total as usize);
    loop {
        all.push(current.clone());
        if !next_permutation(&mut current) {
            break;
        }
    }
    debug_assert_eq!(all.len() as u128, total);
    Ok(all)
}

/// Advances to the next lexicographic permutation; false when exhausted.
fn next_permutation(seq: &mut [usize]) -> bool {
    if seq.len() < 2 {
        return false;
    }
    let Some(pivot) = (0..seq.len() - 1).rev().find(|&i| seq[i] < seq[i + 1]) else {
        return false;
    };
    let swap = (pivot + 1..seq.len()).rev().find(|&j| seq[j] > seq[pivot]).unwrap();
    seq.swap(pivot, swap);
    seq[pivot + 1..].reverse();
    true
}

/// Phase configuration aligning each cluster with its assigned device:
/// element `m` in the cluster of chain `n` serving device `k` gets
/// `angle(phi_m) = angle(h_km) - angle(a_mn)`.
pub fn init_phases(
    assignment: &ClusterAssignment,
    channels: &ChannelSet,
) -> DVector<Complex64> {
    let mut phases = DVector::from_element(channels.element_count(), Complex64::new(1.0, 0.0));
    for (chain, members) in assignment.clusters.iter().enumerate() {
        let device = assignment.assignment[chain];
        for &m in members {
            let angle = channels.its_to_device[(m, device)].arg()
                - channels.feeder_to_its[(m, chain)].arg();
            phases[m] = Complex64::from_polar(1.0, angle);
        }
    }
    phases
}

/// Minimizes the maximum chain output power subject to per-device received
/// power, then factorizes the covariance into at most `N` precoders.
///
/// The semidefinite program is over the precoder covariance `B`:
/// minimize `t` with `chain_gain * B_nn <= t` per chain and
/// `received_gain * h_k^H B h_k >= target_k` per device. Precoders are the
/// scaled dominant eigenvectors of the optimal `B`; eigenpairs below a
/// relative threshold are dropped and the kept ones must reproduce every
/// constraint value to 1e-6 relative.
pub fn min_max_power_precoders(
    eff_channels: &[DVector<Complex64>],
    targets: &[f64],
    chain_gain: f64,
    received_gain: f64,
    max_chain_power: f64,
    tolerances: &SolverTolerances,
) -> Result<Vec<DVector<Complex64>>, InitError> {
    min_max_with_limit(
        eff_channels,
        targets,
        chain_gain,
        received_gain,
        max_chain_power,
        tolerances,
        SDP_EXACT_LIMIT,
    )
}

pub(crate) fn min_max_with_limit(
    eff_channels: &[DVector<Complex64>],
    targets: &[f64],
    chain_gain: f64,
    received_gain: f64,
    max_chain_power: f64,
    tolerances: &SolverTolerances,
    exact_limit: usize,
) -> Result<Vec<DVector<Complex64>>, InitError> {
    assert_eq!(eff_channels.len(), targets.len(), "one target per device");
    if eff_channels.is_empty() {
        return Err(InitError::UnsupportedConfiguration("no devices to serve".into()));
    }
    let chains = eff_channels[0].len();
    if eff_channels.iter().any(|h| h.len() != chains) {
        return Err(InitError::UnsupportedConfiguration(
            "effective channels of unequal length".into(),
        ));
    }
    for (k, h) in eff_channels.iter().enumerate() {
        if h.norm() == 0.0 && targets[k] > 0.0 {
            return Err(InitError::Infeasible(format!(
                "device {k} has a zero effective channel but a positive target"
            )));
        }
    }

    let covariance = if chains <= exact_limit {
        solve_covariance(eff_channels, targets, chain_gain, received_gain, tolerances, None)?
    } else {
        // Restrict the covariance to the span of the effective channels:
        // B = U X U^H keeps every received power reachable while shrinking
        // the semidefinite block to the device count.
        let basis = orthonormal_span(eff_channels);
        if basis.ncols() == 0 {
            return Err(InitError::Infeasible("all effective channels are zero".into()));
        }
        let reduced: Vec<DVector<Complex64>> =
            eff_channels.iter().map(|h| basis.adjoint() * h).collect();
        let x = solve_covariance(&reduced, targets, chain_gain, received_gain, tolerances, Some(&basis))?;
        &basis * x * basis.adjoint()
    };

    // Factorize and validate the recovery.
    let (eigenvalues, eigenvectors) = hermitian_eigen(&covariance);
    let lead = eigenvalues[0].max(0.0);
    let mut precoders: Vec<DVector<Complex64>> = Vec::new();
    for (q, &lambda) in eigenvalues.iter().enumerate() {
        if lambda > EIGENVALUE_KEEP * lead && lambda > 0.0 {
            precoders.push(eigenvectors.column(q) * Complex64::new(lambda.sqrt(), 0.0));
        }
    }
    if precoders.is_empty() {
        // Zero covariance is only optimal when nothing must be delivered.
        precoders.push(DVector::zeros(chains));
    }
    for (k, h) in eff_channels.iter().enumerate() {
        let from_cov = (h.adjoint() * &covariance * h)[(0, 0)].re;
        let from_precoders: f64 = precoders.iter().map(|b| h.dotc(b).norm_sqr()).sum();
        let scale = from_cov.abs().max(targets[k] / received_gain).max(1e-30);
        let relative_error = (from_cov - from_precoders).abs() / scale;
        if relative_error > 1e-6 {
            return Err(InitError::RecoveryMismatch { relative_error });
        }
    }
    for n in 0..chains {
        let power: f64 = chain_gain * precoders.iter().map(|b| b[n].norm_sqr()).sum::<f64>();
        if power > max_chain_power * (1.0 + 1e-9) {
            return Err(InitError::Infeasible(format!(
                "chain {n} needs {power} W output, beyond the {max_chain_power} W limit"
            )));
        }
    }
    Ok(precoders)
}

/// Solves the covariance program, either directly or in a reduced basis.
fn solve_covariance(
    eff_channels: &[DVector<Complex64>],
    targets: &[f64],
    chain_gain: f64,
    received_gain: f64,
    tolerances: &SolverTolerances,
    lift_basis: Option<&DMatrix<Complex64>>,
) -> Result<DMatrix<Complex64>, InitError> {
    let side = eff_channels[0].len();
    let mut pb = ProblemBuilder::new();
    let block: HermitianPsdBlock = pb.add_hermitian_psd(side);
    let t = pb.add_var();
    pb.objective_term(t, 1.0);
    pb.require_nonneg(AffExpr::var(t));

    // Chain power rows: t - chain_gain * (U B U^H)_nn >= 0. In the reduced
    // basis the diagonal entry is a trace form with w w^H, w the basis row.
    let physical_chains = lift_basis.map_or(side, |u| u.nrows());
    for n in 0..physical_chains {
        let w: DVector<Complex64> = match lift_basis {
            None => DVector::from_fn(side, |i, _| {
                Complex64::new(if i == n { 1.0 } else { 0.0 }, 0.0)
            }),
            Some(u) => u.row(n).adjoint(),
        };
        let mut row = block.trace_form(&(&w * w.adjoint()));
        row.scale(-chain_gain);
        row.add_term(t, 1.0);
        pb.require_nonneg(row);
    }

    // Received power rows: received_gain * h^H B h >= target.
    for (h, &target) in eff_channels.iter().zip(targets) {
        let mut row = block.trace_form(&(h * h.adjoint()));
        row.scale(received_gain);
        row.constant -= target;
        pb.require_nonneg(row);
    }

    let problem = pb.build();
    let solution = solve_sdp(&problem, tolerances)?;
    if !solution.status.is_optimal() {
        return Err(InitError::Infeasible(format!(
            "covariance program ended with status {:?}",
            solution.status
        )));
    }
    Ok(block.lift(&solution.x))
}

/// Orthonormal basis of the span of the given vectors (modified
/// Gram-Schmidt, rank-revealing drop of near-dependent vectors).
fn orthonormal_span(vectors: &[DVector<Complex64>]) -> DMatrix<Complex64> {
    let dim = vectors[0].len();
    let mut columns: Vec<DVector<Complex64>> = Vec::new();
    for v in vectors {
        let original_norm = v.norm();
        if original_norm == 0.0 {
            continue;
        }
        let mut residual = v.clone();
        for u in &columns {
            let coeff = u.dotc(&residual);
            residual -= u * coeff;
        }
        if residual.norm() > 1e-10 * original_norm {
            let norm = residual.norm();
            columns.push(residual / Complex64::new(norm, 0.0));
        }
    }
    let mut basis = DMatrix::zeros(dim, columns.len());
    for (j, u) in columns.iter().enumerate() {
        basis.set_column(j, u);
    }
    basis
}

/// Runs the full assignment sweep of the surface initializer, returning
/// every evaluated candidate. Assignments whose min-max precoders violate
/// saturation (or whose covariance program fails) come back without a point.
pub fn evaluate_permutations(
    channels: &ChannelSet,
    targets: &[f64],
    received_gain: f64,
    doherty: &DohertyParams,
    settings: &InitSettings,
) -> Result<PermutationStudy, InitError> {
    let devices = channels.device_count();
    let chains = channels.antenna_count();
    if devices == 0 {
        return Err(InitError::UnsupportedConfiguration("no devices to serve".into()));
    }
    let gains: Vec<f64> = (0..devices).map(|k| channels.device_channel(k).norm_squared()).collect();
    let chain_counts = allocate_rf_chains(&gains, chains)?;
    let clusters = cluster_its_elements(&channels.feeder_to_its, settings.cluster_rule);
    let assignments = enumerate_assignments(&chain_counts, settings.permutation_cap)?;

    let evaluations: Vec<PermutationEvaluation> = assignments
        .into_par_iter()
        .map(|assignment| {
            let cluster_assignment =
                ClusterAssignment { clusters: clusters.clone(), assignment: assignment.clone() };
            let phases = init_phases(&cluster_assignment, channels);
            let point =
                its_point_for_phases(channels, &phases, targets, received_gain, doherty, settings)
                    .map_err(|e| log::debug!("assignment {assignment:?} rejected: {e}"))
                    .ok();
            PermutationEvaluation { assignment, point }
        })
        .collect();
    Ok(PermutationStudy { chain_counts, clusters, evaluations })
}

/// Builds the precoder stage for a fixed phase configuration.
fn its_point_for_phases(
    channels: &ChannelSet,
    phases: &DVector<Complex64>,
    targets: &[f64],
    received_gain: f64,
    doherty: &DohertyParams,
    settings: &InitSettings,
) -> Result<InitialPoint, InitError> {
    let eff: Vec<DVector<Complex64>> = (0..channels.device_count())
        .map(|k| effective_channel(&channels.device_channel(k), phases, &channels.feeder_to_its))
        .collect::<Result<_, _>>()?;
    let precoders = min_max_power_precoders(
        &eff,
        targets,
        doherty.gain,
        received_gain,
        doherty.max_output_w,
        &settings.solver,
    )?;
    let hpa_power_w = amplifier_power(&precoders, doherty)?;
    Ok(InitialPoint { analog: AnalogStage::Phases(phases.clone()), precoders, hpa_power_w })
}

fn amplifier_power(
    precoders: &[DVector<Complex64>],
    doherty: &DohertyParams,
) -> Result<f64, InitError> {
    let chains = precoders[0].len();
    let mut total = 0.0;
    for n in 0..chains {
        let output: f64 =
            doherty.gain * precoders.iter().map(|b| b[n].norm_sqr()).sum::<f64>();
        total += doherty_consumption(output, doherty)
            .map_err(|e| InitError::Infeasible(e.to_string()))?;
    }
    Ok(total)
}

/// Surface initializer: allocation, clustering, assignment sweep, winner by
/// lowest amplifier consumption (ties to the lexicographically smallest
/// assignment).
pub fn init_its(
    channels: &ChannelSet,
    targets: &[f64],
    received_gain: f64,
    doherty: &DohertyParams,
    settings: &InitSettings,
) -> Result<ItsInit, InitError> {
    let study = evaluate_permutations(channels, targets, received_gain, doherty, settings)?;
    let diagnostics: Vec<(Vec<usize>, Option<f64>)> = study
        .evaluations
        .iter()
        .map(|e| (e.assignment.clone(), e.point.as_ref().map(|p| p.hpa_power_w)))
        .collect();
    let winner = study
        .evaluations
        .into_iter()
        .filter_map(|e| e.point)
        .min_by(|a, b| a.hpa_power_w.total_cmp(&b.hpa_power_w));
    match winner {
        Some(point) => Ok(ItsInit { point, chain_counts: study.chain_counts, diagnostics }),
        None => Err(InitError::AllPermutationsInfeasible { evaluated: diagnostics.len() }),
    }
}

/// Hybrid initializer: one analog matrix with phase-aligned columns over the
/// allocated row support, then min-max precoders on the reduced channels.
pub fn init_hybrid(
    channels: &ChannelSet,
    arch: Architecture,
    targets: &[f64],
    received_gain: f64,
    doherty: &DohertyParams,
    settings: &InitSettings,
) -> Result<InitialPoint, InitError> {
    let elements = channels.element_count();
    let chains = channels.antenna_count();
    let devices = channels.device_count();
    if devices == 0 {
        return Err(InitError::UnsupportedConfiguration("no devices to serve".into()));
    }
    let modulus = arch.analog_modulus(elements, chains).ok_or_else(|| {
        InitError::UnsupportedConfiguration(format!("{arch} carries no analog stage"))
    })?;
    let gains: Vec<f64> = (0..devices).map(|k| channels.device_channel(k).norm_squared()).collect();
    let chain_counts = allocate_rf_chains(&gains, chains)?;

    // Chains in device order: the first N_1 columns serve device 1, etc.
    let mut analog = DMatrix::zeros(elements, chains);
    let block = elements / chains;
    let mut chain = 0usize;
    for (device, &count) in chain_counts.iter().enumerate() {
        let h = channels.device_channel(device);
        for _ in 0..count {
            let rows: Box<dyn Iterator<Item = usize>> = match arch {
                Architecture::HybridFullyConnected => Box::new(0..elements),
                Architecture::HybridPartiallyConnected => {
                    Box::new(chain * block..(chain + 1) * block)
                }
                _ => {
                    return Err(InitError::UnsupportedConfiguration(format!(
                        "{arch} is not a hybrid architecture"
                    )))
                }
            };
            for m in rows {
                analog[(m, chain)] = Complex64::from_polar(modulus, h[m].arg());
            }
            chain += 1;
        }
    }

    let eff: Vec<DVector<Complex64>> =
        (0..devices).map(|k| analog.adjoint() * channels.device_channel(k)).collect();
    let precoders = min_max_power_precoders(
        &eff,
        targets,
        doherty.gain,
        received_gain,
        doherty.max_output_w,
        &settings.solver,
    )?;
    let hpa_power_w = amplifier_power(&precoders, doherty)?;
    Ok(InitialPoint { analog: AnalogStage::Matrix(analog), precoders, hpa_power_w })
}

/// Fully digital initializer: min-max precoders straight on the physical
/// channels (span-restricted for large arrays).
pub fn init_fully_digital(
    channels: &ChannelSet,
    targets: &[f64],
    doherty: &DohertyParams,
    settings: &InitSettings,
) -> Result<InitialPoint, InitError> {
    let devices = channels.device_count();
    if devices == 0 {
        return Err(InitError::UnsupportedConfiguration("no devices to serve".into()));
    }
    let eff: Vec<DVector<Complex64>> = (0..devices).map(|k| channels.device_channel(k)).collect();
    let precoders = min_max_power_precoders(
        &eff,
        targets,
        doherty.gain,
        doherty.gain,
        doherty.max_output_w,
        &settings.solver,
    )?;
    let hpa_power_w = amplifier_power(&precoders, doherty)?;
    Ok(InitialPoint { analog: AnalogStage::None, precoders, hpa_power_w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_channels(m: usize, n: usize, k: usize, seed: u64) -> ChannelSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample =
            |scale: f64| Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale));
        ChannelSet {
            feeder_to_its: DMatrix::from_fn(m, n, |_, _| sample(0.3)),
            its_to_device: DMatrix::from_fn(m, k, |_, _| sample(0.05)),
        }
    }

    #[test]
    fn clusters_partition_by_strongest_coupling() {
        for seed in 0..10 {
            let channels = random_channels(8, 3, 1, seed);
            let clusters = cluster_its_elements(&channels.feeder_to_its, ClusterRule::Strongest);
            let mut seen = vec![false; 8];
            for (n, members) in clusters.iter().enumerate() {
                for &m in members {
                    assert!(!seen[m], "element {m} assigned twice");
                    seen[m] = true;
                    let gain = channels.feeder_to_its[(m, n)].norm_sqr();
                    for other in 0..3 {
                        assert!(
                            gain >= channels.feeder_to_its[(m, other)].norm_sqr(),
                            "element {m} not in its strongest cluster"
                        );
                    }
                }
            }
            assert!(seen.iter().all(|&s| s), "partition must cover every element");

            let weakest = cluster_its_elements(&channels.feeder_to_its, ClusterRule::Weakest);
            for (n, members) in weakest.iter().enumerate() {
                for &m in members {
                    let gain = channels.feeder_to_its[(m, n)].norm_sqr();
                    for other in 0..3 {
                        assert!(gain <= channels.feeder_to_its[(m, other)].norm_sqr());
                    }
                }
            }
        }
    }

    #[test]
    fn single_antenna_claims_every_element() {
        let channels = random_channels(5, 1, 1, 3);
        let clusters = cluster_its_elements(&channels.feeder_to_its, ClusterRule::Strongest);
        assert_eq!(clusters, vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn coupling_ties_go_to_the_smallest_antenna() {
        let value = Complex64::new(0.1, 0.2);
        let feeder = DMatrix::from_element(3, 2, value);
        let clusters = cluster_its_elements(&feeder, ClusterRule::Strongest);
        assert_eq!(clusters[0], vec![0, 1, 2]);
        assert!(clusters[1].is_empty());
    }

    #[test]
    fn chain_allocation_follows_the_weighted_metric() {
        // Equal norms: (1,1) -> rho=(2,2), tie breaks to device 0 -> (2,1);
        // then rho=(5,3) sends the next chain to device 1 -> (2,2).
        assert_eq!(allocate_rf_chains(&[1.0, 1.0], 3).unwrap(), vec![2, 1]);
        assert_eq!(allocate_rf_chains(&[1.0, 1.0], 4).unwrap(), vec![2, 2]);
        // A much weaker device keeps attracting chains.
        assert_eq!(allocate_rf_chains(&[1.0, 1e-3], 4).unwrap(), vec![1, 3]);
        // chains == devices leaves the initial allocation untouched.
        assert_eq!(allocate_rf_chains(&[0.3, 0.7, 0.1], 3).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn chain_allocation_conserves_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let devices = rng.gen_range(1..5);
            let chains = rng.gen_range(devices..10);
            let gains: Vec<f64> = (0..devices).map(|_| rng.gen_range(0.1..2.0)).collect();
            let counts = allocate_rf_chains(&gains, chains).unwrap();
            assert_eq!(counts.iter().sum::<usize>(), chains);
            assert!(counts.iter().all(|&c| c >= 1));
        }
        assert!(matches!(
            allocate_rf_chains(&[1.0, 1.0, 1.0], 2),
            Err(InitError::UnsupportedConfiguration(_))
        ));
    }

    #[test]
    fn assignment_enumeration_is_exact_and_ordered() {
        let all = enumerate_assignments(&[1, 1, 1, 1], DEFAULT_PERMUTATION_CAP).unwrap();
        assert_eq!(all.len(), 24);
        assert_eq!(all[0], vec![0, 1, 2, 3]);
        assert_eq!(all[23], vec![3, 2, 1, 0]);
        let unique: std::collections::BTreeSet<_> = all.iter().collect();
        assert_eq!(unique.len(), 24, "permutations must be distinct");

        let multiset = enumerate_assignments(&[2, 1], DEFAULT_PERMUTATION_CAP).unwrap();
        assert_eq!(multiset, vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]);

        assert_eq!(enumerate_assignments(&[3], DEFAULT_PERMUTATION_CAP).unwrap().len(), 1);

        match enumerate_assignments(&[1; 9], 1000) {
            Err(InitError::CombinatorialBlowup { permutations, cap }) => {
                assert_eq!(permutations, 362_880);
                assert_eq!(cap, 1000);
            }
            other => panic!("expected a blowup error, got {other:?}"),
        }
    }

    #[test]
    fn assignment_counts_match_the_multinomial() {
        assert_eq!(assignment_count(&[1, 1, 1, 1]), Some(24));
        assert_eq!(assignment_count(&[2, 1]), Some(3));
        assert_eq!(assignment_count(&[3, 3, 2]), Some(560));
        for n in 1..=8usize {
            for k in 1..=n {
                let mut counts = vec![n / k; k];
                counts[0] += n - (n / k) * k;
                let expected = enumerate_assignments(&counts, u128::MAX).unwrap().len() as u128;
                assert_eq!(assignment_count(&counts), Some(expected), "counts {counts:?}");
            }
        }
    }

    #[test]
    fn phases_compensate_channel_and_coupling_angles() {
        let mut channels = random_channels(4, 2, 1, 5);
        channels.its_to_device[(0, 0)] = Complex64::from_polar(0.1, std::f64::consts::FRAC_PI_2);
        channels.feeder_to_its[(0, 0)] = Complex64::from_polar(0.2, std::f64::consts::FRAC_PI_4);
        let assignment = ClusterAssignment {
            clusters: vec![vec![0, 1], vec![2, 3]],
            assignment: vec![0, 0],
        };
        let phases = init_phases(&assignment, &channels);
        assert!((phases[0].arg() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!(phases.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));

        // Maximum-ratio mimicry: each element's contribution to the assigned
        // device arrives phase-aligned, so the effective entries are real
        // positive sums.
        let eff = effective_channel(
            &channels.device_channel(0),
            &phases,
            &channels.feeder_to_its,
        )
        .unwrap();
        for (n, members) in assignment.clusters.iter().enumerate() {
            let aligned: Complex64 = members
                .iter()
                .map(|&m| {
                    channels.feeder_to_its[(m, n)].conj()
                        * phases[m].conj()
                        * channels.its_to_device[(m, 0)]
                })
                .sum();
            assert!(aligned.im.abs() < 1e-10 * aligned.re, "cluster {n} not aligned");
            assert!(aligned.re > 0.0);
        }
        assert!(eff.iter().all(|v| v.norm() > 0.0));
    }

    #[test]
    fn scalar_min_max_matches_the_closed_form() {
        let h = DVector::from_vec(vec![Complex64::new(0.3, -0.4)]);
        let target = 2e-3;
        let (chain_gain, received_gain) = (100.0, 45.0);
        let precoders = min_max_power_precoders(
            &[h.clone()],
            &[target],
            chain_gain,
            received_gain,
            f64::INFINITY,
            &SolverTolerances::default(),
        )
        .unwrap();
        let total: f64 = precoders.iter().map(|b| b.norm_squared()).sum();
        let expected = target / (received_gain * h.norm_squared());
        assert!(
            (total - expected).abs() < 1e-6 * expected,
            "optimal |b|^2 {total} vs closed form {expected}"
        );
    }

    #[test]
    fn min_max_scales_linearly_with_the_targets() {
        let channels = random_channels(4, 4, 2, 6);
        let eff: Vec<DVector<Complex64>> =
            (0..2).map(|k| channels.device_channel(k)).collect();
        let max_chain = |targets: &[f64]| -> f64 {
            let precoders = min_max_power_precoders(
                &eff,
                targets,
                100.0,
                45.0,
                f64::INFINITY,
                &SolverTolerances::default(),
            )
            .unwrap();
            (0..4)
                .map(|n| 100.0 * precoders.iter().map(|b| b[n].norm_sqr()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let base = max_chain(&[1e-3, 2e-3]);
        let doubled = max_chain(&[2e-3, 4e-3]);
        assert!(
            (doubled - 2.0 * base).abs() < 1e-7 * doubled.max(1e-30),
            "doubling targets must double the min-max power: {base} -> {doubled}"
        );
    }

    #[test]
    fn recovered_precoders_satisfy_the_targets() {
        for seed in 0..5 {
            let channels = random_channels(6, 6, 3, 40 + seed);
            let eff: Vec<DVector<Complex64>> =
                (0..3).map(|k| channels.device_channel(k)).collect();
            let targets = [1e-3, 5e-4, 2e-3];
            let precoders = min_max_power_precoders(
                &eff,
                &targets,
                100.0,
                45.0,
                f64::INFINITY,
                &SolverTolerances::default(),
            )
            .unwrap();
            assert!(precoders.len() <= 6, "at most one precoder per chain");
            for (k, h) in eff.iter().enumerate() {
                let received: f64 =
                    45.0 * precoders.iter().map(|b| h.dotc(b).norm_sqr()).sum::<f64>();
                assert!(
                    received >= targets[k] * (1.0 - 1e-6),
                    "device {k} receives {received} of {}",
                    targets[k]
                );
            }
        }
    }

    #[test]
    fn span_restriction_agrees_with_the_full_program_when_spanning() {
        // With as many independent channels as chains the restriction is the
        // identity, so both paths must land on the same optimum.
        let channels = random_channels(3, 3, 3, 7);
        let eff: Vec<DVector<Complex64>> = (0..3).map(|k| channels.device_channel(k)).collect();
        let targets = [1e-3, 2e-3, 3e-3];
        let run = |limit: usize| -> f64 {
            let precoders = min_max_with_limit(
                &eff,
                &targets,
                100.0,
                45.0,
                f64::INFINITY,
                &SolverTolerances::default(),
                limit,
            )
            .unwrap();
            (0..3)
                .map(|n| 100.0 * precoders.iter().map(|b| b[n].norm_sqr()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let exact = run(usize::MAX);
        let restricted = run(0);
        assert!(
            (exact - restricted).abs() < 1e-5 * exact,
            "exact {exact} vs restricted {restricted}"
        );
    }

    #[test]
    fn span_restriction_stays_feasible_on_tall_problems() {
        let channels = random_channels(40, 40, 2, 8);
        let eff: Vec<DVector<Complex64>> = (0..2).map(|k| channels.device_channel(k)).collect();
        let targets = [1e-3, 2e-3];
        let precoders = min_max_power_precoders(
            &eff,
            &targets,
            100.0,
            45.0,
            f64::INFINITY,
            &SolverTolerances::default(),
        )
        .unwrap();
        assert!(precoders.len() <= 2, "covariance rank bounded by the span");
        for (k, h) in eff.iter().enumerate() {
            let received: f64 = 45.0 * precoders.iter().map(|b| h.dotc(b).norm_sqr()).sum::<f64>();
            assert!(received >= targets[k] * (1.0 - 1e-6));
        }
    }

    #[test]
    fn saturation_limit_rejects_heavy_targets() {
        let h = DVector::from_vec(vec![Complex64::new(1e-4, 0.0)]);
        let result = min_max_power_precoders(
            &[h],
            &[1.0],
            100.0,
            45.0,
            300.0,
            &SolverTolerances::default(),
        );
        assert!(matches!(result, Err(InitError::Infeasible(_))));
    }

    fn scenario_channels(m: usize, n: usize, k: usize, seed: u64) -> ChannelSet {
        use crate::channel::{build_channels, RadiationParams};
        use crate::geometry::{build_scenario, ScenarioParams};
        let wavelength = crate::channel::wavelength(5e9);
        let params = ScenarioParams {
            element_count: m,
            antenna_count: n,
            device_count: k,
            spacing: wavelength / 2.0,
            circumradius: if n > 1 {
                wavelength / (2.0 * (std::f64::consts::PI / n as f64).sin())
            } else {
                0.0
            },
            feeder_distance: (wavelength / 2.0) * (m as f64 / std::f64::consts::PI).sqrt(),
            extent_x: 3.0,
            extent_y: 3.0,
            device_distance: 5.0,
            fixed_devices: None,
        };
        let geometry = build_scenario(&params, seed).unwrap();
        let radiation = RadiationParams::new(wavelength, 10.0, 2.0).unwrap();
        build_channels(&geometry, &radiation).unwrap()
    }

    #[test]
    fn surface_initializer_returns_the_best_feasible_assignment() {
        let channels = scenario_channels(16, 2, 2, 11);
        let doherty = DohertyParams::new(2, 0.25, 300.0, 100.0).unwrap();
        let received_gain = doherty.gain * 0.45;
        let targets = [1e-3, 1e-3];
        let init = init_its(
            &channels,
            &targets,
            received_gain,
            &doherty,
            &InitSettings::default(),
        )
        .unwrap();
        assert_eq!(init.chain_counts.iter().sum::<usize>(), 2);
        assert_eq!(init.diagnostics.len(), 2, "two assignments for two single-chain devices");
        for (_, score) in &init.diagnostics {
            if let Some(score) = score {
                assert!(init.point.hpa_power_w <= score + 1e-12);
            }
        }
        let AnalogStage::Phases(phases) = &init.point.analog else {
            panic!("surface initializer must return phases");
        };
        assert!(phases.iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
        for (k, &target) in targets.iter().enumerate() {
            let eff = effective_channel(
                &channels.device_channel(k),
                phases,
                &channels.feeder_to_its,
            )
            .unwrap();
            let received: f64 = received_gain
                * init.point.precoders.iter().map(|b| eff.dotc(b).norm_sqr()).sum::<f64>();
            assert!(received >= target * (1.0 - 1e-6), "device {k} starts short of target");
        }
    }

    #[test]
    fn hybrid_initializer_aligns_columns_and_meets_targets() {
        let channels = scenario_channels(12, 2, 2, 13);
        let doherty = DohertyParams::new(2, 0.25, 300.0, 100.0).unwrap();
        let targets = [5e-4, 5e-4];
        for arch in [Architecture::HybridFullyConnected, Architecture::HybridPartiallyConnected] {
            let loss = 2.0;
            let init = init_hybrid(
                &channels,
                arch,
                &targets,
                doherty.gain / loss,
                &doherty,
                &InitSettings::default(),
            )
            .unwrap();
            let AnalogStage::Matrix(c) = &init.analog else { panic!("expected a matrix") };
            let modulus = arch.analog_modulus(12, 2).unwrap();
            match arch {
                Architecture::HybridFullyConnected => {
                    assert!(c.iter().all(|v| (v.norm() - modulus).abs() < 1e-12));
                    // Column 0 serves device 0 coherently.
                    let h = channels.device_channel(0);
                    let gain = (c.column(0).adjoint() * &h)[(0, 0)].norm();
                    let coherent: f64 = h.iter().map(|v| v.norm() * modulus).sum();
                    assert!((gain - coherent).abs() < 1e-9 * coherent);
                }
                Architecture::HybridPartiallyConnected => {
                    for col in 0..2 {
                        let nonzero =
                            c.column(col).iter().filter(|v| v.norm() > 0.0).count();
                        assert_eq!(nonzero, 6, "each chain drives its own block");
                    }
                }
                _ => unreachable!(),
            }
            for (k, &target) in targets.iter().enumerate() {
                let eff = c.adjoint() * channels.device_channel(k);
                let received: f64 = (doherty.gain / loss)
                    * init.precoders.iter().map(|b| eff.dotc(b).norm_sqr()).sum::<f64>();
                assert!(received >= target * (1.0 - 1e-6), "{arch} device {k} short");
            }
        }
    }

    #[test]
    fn degenerate_partially_connected_blocks_are_single_entries() {
        let channels = scenario_channels(4, 4, 1, 17);
        let doherty = DohertyParams::new(2, 0.25, 300.0, 100.0).unwrap();
        let init = init_hybrid(
            &channels,
            Architecture::HybridPartiallyConnected,
            &[1e-4],
            doherty.gain / 2.0,
            &doherty,
            &InitSettings::default(),
        )
        .unwrap();
        let AnalogStage::Matrix(c) = &init.analog else { panic!("expected a matrix") };
        for col in 0..4 {
            for row in 0..4 {
                let norm = c[(row, col)].norm();
                if row == col {
                    assert!((norm - 1.0).abs() < 1e-12, "unit modulus on the diagonal");
                } else {
                    assert_eq!(norm, 0.0);
                }
            }
        }
    }

    #[test]
    fn fully_digital_initializer_meets_targets() {
        let channels = scenario_channels(9, 1, 2, 19);
        let doherty = DohertyParams::new(2, 0.25, 300.0, 100.0).unwrap();
        let targets = [1e-4, 2e-4];
        let init =
            init_fully_digital(&channels, &targets, &doherty, &InitSettings::default()).unwrap();
        assert!(matches!(init.analog, AnalogStage::None));
        for (k, &target) in targets.iter().enumerate() {
            let h = channels.device_channel(k);
            let received: f64 =
                doherty.gain * init.precoders.iter().map(|b| h.dotc(b).norm_sqr()).sum::<f64>();
            assert!(received >= target * (1.0 - 1e-6));
        }
    }
}
