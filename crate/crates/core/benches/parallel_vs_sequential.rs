use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ethplan_core::par::Parallelism;
use ethplan_core::prediction::{check_gradients_with, random_gradcheck_sample, train, NetworkConfig, Stencil, TrainConfig};
use ethplan_core::simulation::{evaluate_suite, ConstantVelocityConfig, Predictor, SimConfig, Variant};
use ethplan_core::synth::synthetic_suite;

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn suite(c: &mut Criterion) {
    let scenarios = synthetic_suite(2024, 6);
    let predictor = Predictor::ConstantVelocity(ConstantVelocityConfig::default());
    let mut ethical = SimConfig::default();
    ethical.planner.j_mean_mode = ethplan_core::planner::JMeanMode::CohortMean;
    let mut baseline = ethical.clone();
    baseline.planner.omega_u = 0.0;
    let variants = [Variant { name: "baseline".into(), config: baseline }, Variant { name: "ethical".into(), config: ethical }];
    let mut g = c.benchmark_group("evaluate_suite");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| evaluate_suite(black_box(&scenarios), &variants, &predictor, 0, mode).unwrap())
        });
    }
    g.finish();
}

fn gradcheck(c: &mut Criterion) {
    let config = NetworkConfig { hidden: 8, history_len: 6, horizon: 6, ..NetworkConfig::default() };
    let (params, sample) = random_gradcheck_sample(&config, 1, 3);
    let mut g = c.benchmark_group("check_gradients");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| check_gradients_with(black_box(&params), &sample, 2e-3, Stencil::FivePoint, None, mode).unwrap())
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let config = NetworkConfig { hidden: 16, history_len: 8, horizon: 12, ..NetworkConfig::default() };
    let (params, first) = random_gradcheck_sample(&config, 0, 3);
    let data: Vec<_> = std::iter::once(first).chain((1..16).map(|s| random_gradcheck_sample(&config, s, 3).1)).collect();
    let cfg = TrainConfig { steps: 5, ..TrainConfig::default() };
    let mut g = c.benchmark_group("train_5_steps");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| train(params.clone(), black_box(&data), &cfg, mode).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, suite, gradcheck, training);
criterion_main!(benches);
