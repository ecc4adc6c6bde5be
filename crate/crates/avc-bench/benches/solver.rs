use avc_core::prob::{Channel, Dist};
use avc_core::solver;
use avc_core::strategy::SystemSpec;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn xor_identity() -> SystemSpec {
    SystemSpec::from_tables(
        2,
        2,
        &[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ],
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
    )
    .unwrap()
}

fn xor_noisy_obs() -> SystemSpec {
    SystemSpec::from_tables(
        2,
        2,
        &[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ],
        &[vec![0.9, 0.1], vec![0.1, 0.9]],
    )
    .unwrap()
}

fn bench_inner_min(c: &mut Criterion) {
    let spec = xor_identity();
    let p_z = Dist::new(spec.z_alphabet().clone(), vec![0.5, 0.5]).unwrap();
    let strat = spec.strategies().unwrap();
    let (_, p_u_given_z) = solver::middle_max(&spec, &p_z, 1e-6, 4).unwrap();
    c.bench_function("inner_min xor", |b| {
        b.iter(|| solver::inner_min(&spec, black_box(&p_z), &p_u_given_z, &strat, 1e-8).unwrap())
    });
}

fn bench_middle_max(c: &mut Criterion) {
    let spec = xor_noisy_obs();
    let p_z = Dist::new(spec.z_alphabet().clone(), vec![0.5, 0.5]).unwrap();
    c.bench_function("middle_max xor noisy obs", |b| {
        b.iter(|| solver::middle_max(&spec, black_box(&p_z), 1e-5, 2).unwrap())
    });
}

fn bench_capacity(c: &mut Criterion) {
    let spec = xor_noisy_obs();
    let mut g = c.benchmark_group("capacity");
    g.sample_size(10);
    g.bench_function("xor noisy obs grid 8", |b| {
        b.iter(|| solver::capacity(black_box(&spec), 8, 1e-4).unwrap())
    });
    g.finish();
}

fn bench_oblivious(c: &mut Criterion) {
    let spec = xor_identity();
    c.bench_function("capacity_oblivious xor grid 16", |b| {
        b.iter(|| solver::capacity_oblivious(black_box(&spec), 16).unwrap())
    });
}

criterion_group!(
    benches,
    bench_inner_min,
    bench_middle_max,
    bench_capacity,
    bench_oblivious
);
criterion_main!(benches);
