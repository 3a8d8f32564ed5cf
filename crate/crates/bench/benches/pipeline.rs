//! Benchmarks for the pipeline stages: scenario sampling, channel
//! synthesis, amplifier models, initialization and one optimization pass.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use wetbeam_core::architectures::Architecture;
use wetbeam_core::channel::{build_channels, effective_channel, ChannelSet};
use wetbeam_core::geometry::build_scenario;
use wetbeam_core::harness::{resolve, ExperimentConfig, ResolvedConfig};
use wetbeam_core::init::{init_its, min_max_power_precoders, InitSettings};
use wetbeam_core::power::doherty_consumption;
use wetbeam_core::sca::{sca_optimize, ScaSettings};

fn resolved(m: usize, n: usize, k: usize) -> ResolvedConfig {
    let mut config = ExperimentConfig::default();
    config.m = m;
    config.n = n;
    config.k = k;
    resolve(&config).expect("benchmark configuration is valid")
}

fn channels_for(point: &ResolvedConfig, seed: u64) -> ChannelSet {
    let geometry = build_scenario(&point.scenario_params(point.feeder_distance), seed)
        .expect("scenario fits the room");
    build_channels(&geometry, &point.radiation()).expect("channel synthesis succeeds")
}

fn bench_channels(c: &mut Criterion) {
    let point = resolved(100, 4, 4);
    c.bench_function("scenario_and_channels_m100", |b| {
        b.iter(|| channels_for(&point, 7))
    });

    let channels = channels_for(&point, 7);
    let phases = nalgebra::DVector::from_element(100, num_complex::Complex64::new(1.0, 0.0));
    c.bench_function("effective_channel_m100", |b| {
        b.iter(|| {
            effective_channel(&channels.device_channel(0), &phases, &channels.feeder_to_its)
                .unwrap()
        })
    });
}

fn bench_amplifier(c: &mut Criterion) {
    let point = resolved(100, 4, 4);
    let doherty = point.power_model().doherty;
    let levels: Vec<f64> = (1..=100).map(|i| doherty.max_output_w * i as f64 / 100.0).collect();
    c.bench_function("doherty_consumption_sweep", |b| {
        b.iter(|| {
            levels
                .iter()
                .map(|&p| doherty_consumption(p, &doherty).unwrap())
                .sum::<f64>()
        })
    });
}

fn bench_initialization(c: &mut Criterion) {
    let point = resolved(36, 2, 2);
    let channels = channels_for(&point, 11);
    let targets = point.targets();
    let power = point.power_model();
    let gain = point.effective_gain(Architecture::Its).unwrap();
    let settings = InitSettings::default();
    c.bench_function("min_max_precoders_m36", |b| {
        b.iter_batched(
            || channels.clone(),
            |ch| {
                let eff: Vec<_> = (0..ch.device_count())
                    .map(|k| {
                        let phases = nalgebra::DVector::from_element(
                            36,
                            num_complex::Complex64::new(1.0, 0.0),
                        );
                        effective_channel(&ch.device_channel(k), &phases, &ch.feeder_to_its)
                            .unwrap()
                    })
                    .collect();
                min_max_power_precoders(
                    &eff,
                    &targets,
                    power.doherty.gain,
                    gain,
                    power.doherty.max_output_w,
                    &settings.solver,
                )
                .unwrap()
            },
            BatchSize::SmallInput,
        )
    });
    c.bench_function("init_its_m36", |b| {
        b.iter(|| init_its(&channels, &targets, gain, &power.doherty, &settings).unwrap())
    });
}

fn bench_optimization(c: &mut Criterion) {
    let point = resolved(16, 2, 2);
    let channels = channels_for(&point, 13);
    let targets = point.targets();
    let power = point.power_model();
    let gain = point.effective_gain(Architecture::Its).unwrap();
    let init = init_its(&channels, &targets, gain, &power.doherty, &InitSettings::default())
        .unwrap()
        .point;
    let settings = ScaSettings { max_iterations: 1, ..ScaSettings::default() };
    c.bench_function("sca_single_pass_m16", |b| {
        b.iter(|| {
            sca_optimize(
                Architecture::Its,
                &channels,
                &init.analog,
                &init.precoders,
                &targets,
                gain,
                &power,
                &settings,
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_channels,
    bench_amplifier,
    bench_initialization,
    bench_optimization
);
criterion_main!(benches);
