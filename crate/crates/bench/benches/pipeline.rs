use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfpod::benchmark::optimize_esc;
use mfpod::field_grid::interpolate_nearest;
use mfpod::kriging::fit_kriging;
use mfpod::optimizer::EscThresholds;
use mfpod::pod::compute_pod;
use mfpod::synthetic::{hf_field, reference_design};
use mfpod::{lhs, DesignSpace, FieldSurrogate, KrigingConfig, Method, SqpOptions};
use mfpod_bench::{dataset, problem, snapshots, surrogate};

fn doe(c: &mut Criterion) {
    let space = DesignSpace::esc();
    c.bench_function("lhs_1500x7", |b| b.iter(|| lhs(&space, black_box(1500), 42).unwrap()));
}

fn regrid(c: &mut Criterion) {
    let p = problem(100, 20_000, 50_000);
    let field = hf_field(&reference_design(), p.config()).unwrap();
    c.bench_function("nearest_50k_to_100x100", |b| {
        b.iter(|| interpolate_nearest(black_box(&field), p.grid().clone()).unwrap())
    });
}

fn pod(c: &mut Criterion) {
    let p = problem(100, 2_000, 2_000);
    let mut g = c.benchmark_group("pod");
    for rows in [50, 150] {
        let snaps = snapshots(p.grid().clone(), rows);
        g.bench_with_input(BenchmarkId::from_parameter(rows), &snaps, |b, s| {
            b.iter(|| compute_pod(s, 20).unwrap())
        });
    }
    g.finish();
}

fn kriging(c: &mut Criterion) {
    let space = DesignSpace::esc();
    let cfg = KrigingConfig {
        n_restarts: 1,
        ..KrigingConfig::default()
    };
    let mut g = c.benchmark_group("kriging_fit_7d");
    g.sample_size(10);
    for n in [50, 100] {
        let x = lhs(&space, n, 3).unwrap();
        let y: Vec<f64> = x.row_iter().map(|r| r.iter().enumerate().map(|(d, v)| (v * (d + 1) as f64).sin()).sum()).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &(x, y), |b, (x, y)| {
            b.iter(|| fit_kriging(x, y, &cfg).unwrap())
        });
    }
    g.finish();
}

fn surrogates(c: &mut Criterion) {
    let p = problem(60, 8_000, 20_000);
    let data = dataset(&p, 100, 40);
    let mut g = c.benchmark_group("surrogate");
    g.sample_size(10);
    g.bench_function("train_mf_100_40_k10", |b| b.iter(|| surrogate(&data, Method::Mf, 10)));
    let model = surrogate(&data, Method::Mf, 10);
    let x = reference_design();
    g.bench_function("predict_field", |b| b.iter(|| model.predict_field(black_box(&x)).unwrap()));
    g.bench_function("latent_jacobian", |b| b.iter(|| model.latent_jacobian(black_box(&x)).unwrap()));
    g.finish();

    let model: Arc<dyn FieldSurrogate> = Arc::new(model);
    let mut g = c.benchmark_group("optimize");
    g.sample_size(10);
    g.bench_function("esc_single_start", |b| {
        b.iter(|| optimize_esc(model.clone(), EscThresholds::default(), 1, 0, &SqpOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, doe, regrid, pod, kriging, surrogates);
criterion_main!(benches);
