use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tracenorm_bench::random_matrix;
use tracenorm_core::linalg::svd;

fn jacobi(c: &mut Criterion) {
    let mut group = c.benchmark_group("svd");
    for &(m, n) in &[(16, 16), (48, 16), (96, 32), (64, 64)] {
        let w = random_matrix(m, n, (m * n) as u64);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{m}x{n}")), &w, |bench, w| {
            bench.iter(|| svd(black_box(w)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, jacobi);
criterion_main!(benches);
