//! End-to-end fit cost at growing outcome dimension, and its pieces.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use ubmaud::estimator::{fit, ols_fit, FitOptions};
use ubmaud::likelihood::{fisher_information, score, BlockSummaries};
use ubmaud::simgen::{sample_dataset, BetaSpec, ScenarioConfig};
use ubmaud::{Dataset, GammaVector, PartitionVector};

fn scenario(sizes: Vec<usize>, n: usize) -> ScenarioConfig {
    let g = sizes.len();
    let mut gamma = vec![0.0; g * (g + 1) / 2];
    let mut k = 0;
    for i in 0..g {
        for j in i..g {
            gamma[k] = if i == j { 0.25 } else { 0.05 };
            k += 1;
        }
    }
    ScenarioConfig {
        n,
        sizes,
        p: 3,
        gamma,
        beta: BetaSpec::default(),
        noise_level: 0.0,
        replicates: 1,
        seed: 7,
    }
}

fn dataset(sizes: Vec<usize>, n: usize) -> Dataset {
    sample_dataset(&scenario(sizes, n), 0).unwrap()
}

fn bench_full_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(20);
    for (sizes, n) in [
        (vec![30usize, 40, 60], 300usize),
        (vec![100, 150, 250], 300),
        (vec![500, 500, 500, 500], 500),
    ] {
        let data = dataset(sizes, n);
        let r = data.part().total_dim();
        group.bench_with_input(BenchmarkId::from_parameter(r), &data, |bch, d| {
            bch.iter(|| black_box(fit(d, &FitOptions::default()).unwrap()))
        });
    }
    group.finish();
}

fn bench_pieces(c: &mut Criterion) {
    let data = dataset(vec![500, 500, 500, 500], 500);
    let part = data.part().clone();
    let residuals = ols_fit(&data).unwrap().residuals;
    let summaries = BlockSummaries::from_residuals(&residuals, &part).unwrap();
    let gamma = GammaVector::from_slice(
        &[0.25, 0.05, 0.05, 0.05, 0.25, 0.05, 0.05, 0.25, 0.05, 0.25],
        PartitionVector::new(vec![500, 500, 500, 500]).unwrap(),
    )
    .unwrap();
    let mut group = c.benchmark_group("pieces_r2000");
    group.bench_function("least_squares", |b| {
        b.iter(|| black_box(ols_fit(&data).unwrap()))
    });
    group.bench_function("block_summaries", |b| {
        b.iter(|| black_box(BlockSummaries::from_residuals(&residuals, &part).unwrap()))
    });
    group.bench_function("score", |b| b.iter(|| black_box(score(&gamma, &summaries).unwrap())));
    group.bench_function("fisher_information", |b| {
        b.iter(|| black_box(fisher_information(&gamma, 500).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_full_fit, bench_pieces);
criterion_main!(benches);
