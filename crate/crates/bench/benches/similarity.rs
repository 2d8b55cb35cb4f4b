use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use repsim_bench::{correlated_pair, gaussian_layer};
use repsim_core::cca::DEFAULT_EPS;
use repsim_core::similarity::pwcca_distance;
use repsim_core::tensor::svd;
use repsim_core::{compute_cca, svcca_preprocess};

fn bench_cca(c: &mut Criterion) {
    let mut g = c.benchmark_group("compute_cca");
    g.sample_size(20);
    for &(n, m) in &[(50, 500), (200, 2000)] {
        let (a, b) = correlated_pair(n, m, n / 2, 7);
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{n}x{m}")),
            &(a, b),
            |bch, (a, b)| bch.iter(|| compute_cca(a, b, DEFAULT_EPS).unwrap()),
        );
    }
    g.finish();
}

fn bench_pwcca(c: &mut Criterion) {
    let mut g = c.benchmark_group("pwcca");
    g.sample_size(20);
    for &(n, m) in &[(50, 500), (200, 2000)] {
        let (a, b) = correlated_pair(n, m, n / 2, 11);
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{n}x{m}")),
            &(a, b),
            |bch, (a, b)| bch.iter(|| pwcca_distance(a, b, DEFAULT_EPS).unwrap()),
        );
    }
    g.finish();
}

fn bench_svd(c: &mut Criterion) {
    let mut g = c.benchmark_group("svd");
    g.sample_size(20);
    for &n in &[50, 200] {
        let l = gaussian_layer(n, n, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &l, |bch, l| {
            bch.iter(|| svd(l.matrix()).unwrap())
        });
    }
    let l = gaussian_layer(200, 2000, 5);
    g.bench_function("svcca_preprocess_200x2000", |bch| {
        bch.iter(|| svcca_preprocess(&l, 0.99).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench_cca, bench_pwcca, bench_svd);
criterion_main!(benches);
