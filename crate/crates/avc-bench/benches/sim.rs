use avc_core::prob::Dist;
use avc_core::sim::{Adversary, CodeParams, Simulator};
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

fn bench_simulator_build(c: &mut Criterion) {
    let spec = xor_identity();
    let params = CodeParams::new(64, 0.25, 11).unwrap();
    let mut g = c.benchmark_group("sim");
    g.sample_size(10);
    g.bench_function("simulator build n=64", |b| {
        b.iter(|| Simulator::new(black_box(&spec), &params).unwrap())
    });
    g.finish();
}

fn bench_run_trial(c: &mut Criterion) {
    let spec = xor_identity();
    let params = CodeParams::new(64, 0.25, 11).unwrap();
    let simulator = Simulator::new(&spec, &params).unwrap();
    let adversary = Adversary::Iid(Dist::uniform(spec.s_alphabet().clone()));
    let mut g = c.benchmark_group("sim");
    g.sample_size(20);
    let mut trial = 0u64;
    g.bench_function("run_trial n=64", |b| {
        b.iter(|| {
            trial += 1;
            simulator
                .run_trial(black_box(&adversary), trial % 4, trial)
                .unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, bench_simulator_build, bench_run_trial);
criterion_main!(benches);
