use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ddlqr::markov::{build_data_matrices, estimate_predictor, PredictorOptions};
use ddlqr::matrix::pseudo_inverse;
use ddlqr::{dare_solve, design_gain, monte_carlo_obs, DareOptions, Extraction, MonteCarloConfig, PipelineConfig};
use ddlqr_bench::{scalar_noisy_plant, two_state_data, two_state_plant, two_state_weights};
use std::hint::black_box;

fn pinv(c: &mut Criterion) {
    let data = two_state_data(1022);
    let dm = build_data_matrices(&data, 51, None).unwrap();
    c.bench_function("pseudo_inverse 306x921", |b| {
        b.iter(|| pseudo_inverse(black_box(&dm.phi), 1e-12))
    });
}

fn predictor(c: &mut Criterion) {
    let data = two_state_data(1022);
    let mut group = c.benchmark_group("markov_predictor");
    for depth in [10usize, 51] {
        let dm = build_data_matrices(&data, depth, None).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(depth), &dm, |b, dm| {
            b.iter(|| estimate_predictor(black_box(dm), &PredictorOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn design(c: &mut Criterion) {
    let data = two_state_data(1022);
    let mut group = c.benchmark_group("design_gain");
    group.sample_size(20);
    for depth in [10usize, 51] {
        let config = PipelineConfig::new(depth, two_state_weights());
        group.bench_with_input(BenchmarkId::from_parameter(depth), &config, |b, cfg| {
            b.iter(|| design_gain(black_box(&data), cfg).unwrap())
        });
    }
    group.finish();
}

fn dare(c: &mut Criterion) {
    let model = two_state_plant();
    let weights = two_state_weights();
    c.bench_function("dare_solve two-state", |b| {
        b.iter(|| dare_solve(black_box(&model), &weights, &DareOptions::default()).unwrap())
    });
}

fn monte_carlo(c: &mut Criterion) {
    let cfg = MonteCarloConfig {
        model: scalar_noisy_plant(),
        length: 1022,
        depth: 3,
        width: None,
        prbs_amplitude: 1.0,
        prbs_order: 10,
        noise_variance: 0.1,
        measurement_noise_variance: 0.0,
        runs: 200,
        base_seed: 1,
        fixed_input: false,
        extraction: Extraction::Average,
    };
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    group.bench_function("200 runs", |b| b.iter(|| monte_carlo_obs(black_box(&cfg)).unwrap()));
    group.finish();
}

criterion_group!(benches, pinv, predictor, design, dare, monte_carlo);
criterion_main!(benches);
