//! Criterion benches comparing the rayon data-parallel trial loop against
//! the sequential fallback on identical seeds, plus the two hot kernels
//! (scan statistic, null-median calibration) they drive.
//!
//! With `--no-default-features` the "parallel" cases degrade to the
//! sequential path and the comparison collapses, as expected.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use corrsense::detectors::{localized_scan_statistic, Calibration, SampleMatrix};
use corrsense::detectors::{
    null_median_lr, EquicorrRowModel, StConfig, StDisjointIntervals, UniformScan,
};
use corrsense::exec::Parallelism;
use corrsense::model::{ContaminationClass, ModelKind};
use corrsense::risk::{estimate_risk, InstanceFamily, RiskConfig};
use corrsense::rng::stream;
use rand::Rng;

fn bench_risk_trials(c: &mut Criterion) {
    let class = ContaminationClass::DisjointKIntervals { n: 512, k: 16 };
    let rho = 0.3;
    let family = InstanceFamily {
        class,
        rho,
        model: ModelKind::Normalized,
    };
    let proc = StDisjointIntervals::new(
        class,
        rho,
        16,
        ModelKind::Normalized,
        StConfig {
            gamma_sims: 20_000,
            ..StConfig::default()
        },
    )
    .unwrap();

    let mut group = c.benchmark_group("risk_trials_st");
    group.sample_size(10);
    for (label, parallelism) in [
        ("sequential", Parallelism::Sequential),
        ("rayon", Parallelism::Parallel { workers: None }),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &parallelism, |b, &p| {
            b.iter(|| {
                let config = RiskConfig {
                    parallelism: p,
                    ..RiskConfig::new(100, 42)
                };
                estimate_risk(&proc, &family, &config).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_scan_calibration(c: &mut Criterion) {
    let class = ContaminationClass::DisjointKIntervals { n: 4096, k: 64 };
    let rho = 0.1;
    let mut group = c.benchmark_group("scan_threshold_calibration");
    group.sample_size(10);
    // The threshold cache is keyed by seed; a process-wide counter keeps
    // every iteration (including warmup) on a fresh entry.
    static SEED: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    group.bench_function("monte_carlo_2000_sims", |b| {
        b.iter(|| {
            let seed = SEED.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            UniformScan::new(
                class,
                rho,
                8,
                Calibration::MonteCarloNull {
                    alpha: 0.05,
                    n_sims: 2_000,
                    seed,
                },
            )
            .unwrap()
        })
    });
    group.finish();
}

fn bench_scan_statistic(c: &mut Criterion) {
    let (n, k, m) = (4096usize, 64u32, 8usize);
    let mut rng = stream(7, &[]);
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect();
    let samples = SampleMatrix::new((1..=n as u32).collect(), rows).unwrap();
    let class = ContaminationClass::KIntervals { n: n as u32, k };
    c.bench_function("scan_statistic_sliding_4096", |b| {
        b.iter(|| localized_scan_statistic(&samples, &class).unwrap().value)
    });
}

fn bench_null_median(c: &mut Criterion) {
    let model = EquicorrRowModel::new(0.25, 16, ModelKind::Normalized).unwrap();
    c.bench_function("null_median_lr_equicorr_d16", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            let mut rng = stream(seed, &[]);
            null_median_lr(&model, 8, &mut rng, 20_000).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_risk_trials,
    bench_scan_calibration,
    bench_scan_statistic,
    bench_null_median
);
criterion_main!(benches);
