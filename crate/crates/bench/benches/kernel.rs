use std::hint::black_box;

use bergman_bench::{exp11, table};
use bergman_core::kernel::{compute_moments, norm_kz, KernelParams};
use bergman_core::Complex64;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn moments(c: &mut Criterion) {
    let w = exp11();
    let mut g = c.benchmark_group("moments");
    g.sample_size(10);
    for n in [64, 256, 512] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| compute_moments(&w, &KernelParams::with_basis(n)).unwrap())
        });
    }
    g.finish();
}

fn kernel_eval(c: &mut Criterion) {
    let t = table(256);
    let z = Complex64::new(0.5, 0.2);
    let w = Complex64::new(-0.3, 0.6);
    c.bench_function("kappa_256", |b| b.iter(|| t.kappa(black_box(z), black_box(w))));
    let mut g = c.benchmark_group("norm_kz");
    g.sample_size(10);
    for p in [1.0, 2.0] {
        g.bench_with_input(BenchmarkId::from_parameter(p), &p, |b, &p| b.iter(|| norm_kz(&t, z, p).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, moments, kernel_eval);
criterion_main!(benches);
