use criterion::{criterion_group, criterion_main, Criterion};
use holo_core::atlas::{correlation_network, covariance_matrix, OrganFeatureMatrix};
use holo_core::rng::SeedStream;
use holo_core::synth::{generate_phantom, PhantomConfig};
use holo_core::testkit::micro_batch;
use holo_core::train::{OptimizerConfig, TrainConfig, Trainer};
use std::hint::black_box;

fn training(c: &mut Criterion) {
    let (model, inputs, _) = micro_batch(1).unwrap();
    let cfg = TrainConfig {
        optimizer: OptimizerConfig::adamw(1e-3),
        ..Default::default()
    };
    let mut tr = Trainer::new(model, cfg).unwrap();
    c.bench_function("train_step_micro", |b| b.iter(|| tr.train_step(black_box(&inputs)).unwrap()));
}

fn synthesis(c: &mut Criterion) {
    let cfg = PhantomConfig::whole_body();
    let mut g = c.benchmark_group("synth");
    g.sample_size(10);
    g.bench_function("whole_body_phantom", |b| b.iter(|| generate_phantom(black_box(5), &cfg).unwrap()));
    g.finish();
}

fn atlas(c: &mut Criterion) {
    let (subjects, organs) = (500, 60);
    let mut r = SeedStream::new(2);
    let values = (0..subjects).map(|_| (0..organs).map(|_| Some(2.0 + r.normal())).collect()).collect();
    let m = OrganFeatureMatrix::new(
        (1..=organs as u16).collect(),
        (0..subjects).map(|i| i.to_string()).collect(),
        vec![50.0; subjects],
        values,
    )
    .unwrap();
    c.bench_function("covariance_500x60", |b| b.iter(|| covariance_matrix(black_box(&m), false)));
    c.bench_function("network_500x60", |b| b.iter(|| correlation_network(black_box(&m), 0.5, 0.05).unwrap()));
}

criterion_group!(benches, training, synthesis, atlas);
criterion_main!(benches);
