//! Scratch probe: convergence statistics across realizations (not a test).

use wetbeam_core::architectures::Architecture;
use wetbeam_core::channel::build_channels;
use wetbeam_core::conic::SolverTolerances;
use wetbeam_core::geometry::build_scenario;
use wetbeam_core::harness::{derive_seed, resolve, ExperimentConfig};
use wetbeam_core::init::{init_its, InitSettings};
use wetbeam_core::sca::{sca_optimize, ScaSettings};

#[test]
#[ignore = "diagnostic probe"]
fn zprobe_convergence_stats() {
    let mut config = ExperimentConfig::default();
    config.m = 64;
    config.n = 4;
    config.k = 4;
    let resolved = resolve(&config).unwrap();
    let targets = resolved.targets();
    let power = resolved.power_model();
    let gain = resolved.effective_gain(Architecture::Its).unwrap();
    let mut sca_settings = ScaSettings::default();
    sca_settings.max_iterations = 200;
    let init_settings = InitSettings {
        cluster_rule: config.cluster_rule,
        permutation_cap: config.permutation_cap as u128,
        solver: SolverTolerances::default(),
    };
    for realization in 0..12u64 {
        let seed = derive_seed(config.seed, 0, realization);
        let geom =
            build_scenario(&resolved.scenario_params(resolved.feeder_distance), seed).unwrap();
        let channels = build_channels(&geom, &resolved.radiation()).unwrap();
        let init = init_its(&channels, &targets, gain, &power.doherty, &init_settings).unwrap();
        let solution = sca_optimize(
            Architecture::Its,
            &channels,
            &init.point.analog,
            &init.point.precoders,
            &targets,
            gain,
            &power,
            &sca_settings,
        )
        .unwrap();
        let start = solution.trace.first().map(|r| r.objective_w).unwrap_or(0.0);
        eprintln!(
            "real {realization:2} seed {seed:20} iters {:3} converged {:5} start {start:9.3} final {:9.3} stopped {:?}",
            solution.iterations,
            solution.converged,
            solution.total_power_w,
            solution.stopped_early
        );
    }
}
