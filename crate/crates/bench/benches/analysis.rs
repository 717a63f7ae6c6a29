use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hystheat_core::acceptance::reference_rod;
use hystheat_core::bifurcation::scan_diagram;
use hystheat_core::linalg;
use hystheat_core::periodic::PeriodicSolution;
use hystheat_core::stability::matrix_a;
use hystheat_core::{enumerate_periodic, simulate};

fn bench_scan(c: &mut Criterion) {
    let sys = reference_rod(2.0, 16);
    c.bench_function("scan_diagram rod16 400", |b| {
        b.iter(|| scan_diagram(black_box(&sys), 1e-3, 10.0, 400).unwrap())
    });
}

fn bench_enumerate(c: &mut Criterion) {
    let sys = reference_rod(3.2, 16);
    c.bench_function("enumerate_periodic rod16 gap 0.4", |b| {
        b.iter(|| enumerate_periodic(black_box(&sys), 0.0, 0.4, 10.0).unwrap())
    });
}

fn bench_eigenvalues(c: &mut Criterion) {
    let sys = reference_rod(2.0, 16);
    let a = matrix_a(&sys, 0.5).unwrap();
    c.bench_function("eigenvalues A(s)", |b| {
        b.iter(|| linalg::eigenvalues(black_box(&a)).unwrap())
    });
}

fn bench_simulate(c: &mut Criterion) {
    let sys = reference_rod(3.2, 16);
    let sol = PeriodicSolution::at(&sys, 0.0, 0.4, 2.106875);
    c.bench_function("simulate rod16 ten periods", |b| {
        b.iter(|| simulate(black_box(&sys), &sol.psi, 0.0, 0.4, 20.0 * sol.s).unwrap())
    });
}

criterion_group!(
    benches,
    bench_scan,
    bench_enumerate,
    bench_eigenvalues,
    bench_simulate
);
criterion_main!(benches);
