use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use polybrud_core::learner::BrudObjective;
use polybrud_core::pjap::refresh;
use polybrud_core::{
    build_game, compute_stats, generate, rng, train_offline, DatasetSpec, GameSpec, GradientMode,
    JointPolicy, LearnConfig, PjapConfig, ReplayBuffer,
};
use rand::Rng;

fn sampling(c: &mut Criterion) {
    let data = generate(&DatasetSpec::uniform(-1.0, 1.0, 100_000, 1)).unwrap();
    let mut buf = ReplayBuffer::from_samples(&data, 1.0).unwrap();
    let mut r = rng::stream(2, 0);
    let ids: Vec<usize> = buf.ids().collect();
    let pri: Vec<f64> = ids.iter().map(|_| r.random_range(0.01..1.0)).collect();
    buf.update_priorities(&ids, &pri).unwrap();
    let mut g = c.benchmark_group("buffer_100k");
    g.bench_function("prioritized_batch_64", |b| {
        let mut r = rng::stream(3, 1);
        b.iter(|| black_box(buf.sample_prioritized(64, &mut r).unwrap()))
    });
    g.bench_function("uniform_batch_64", |b| {
        let mut r = rng::stream(3, 1);
        b.iter(|| black_box(buf.sample_uniform(64, &mut r).unwrap()))
    });
    g.bench_function("pjap_refresh_10pct", |b| {
        let pol = JointPolicy::new(0.3, 0.3);
        let cfg = PjapConfig::default();
        b.iter_batched(
            || buf.clone(),
            |mut bb| refresh(&mut bb, &pol, &cfg, &mut rng::stream(4, 3)).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn gradients(c: &mut Criterion) {
    let poly = build_game(&GameSpec::TwinPeaks(Default::default())).unwrap();
    let obj = BrudObjective::new(&poly);
    let data = generate(&DatasetSpec::gaussian((0.6, 0.6), 0.5, 64, 5)).unwrap();
    let stats = compute_stats(&data, 2).unwrap();
    let pol = JointPolicy::new(0.1, -0.2);
    c.bench_function("exact_gradient_twin_peaks", |b| {
        b.iter(|| black_box(obj.exact_gradient(black_box(&pol), &stats).unwrap()))
    });
    c.bench_function("minibatch_gradient_64", |b| {
        b.iter(|| black_box(obj.minibatch_gradient(black_box(&pol), &data).unwrap()))
    });
}

fn training(c: &mut Criterion) {
    let poly = build_game(&GameSpec::TwinPeaks(Default::default())).unwrap();
    let data = generate(&DatasetSpec::gaussian((0.6, 0.6), 0.5, 5000, 7)).unwrap();
    let mut g = c.benchmark_group("train_offline_1000_steps");
    g.sample_size(20);
    for (name, mode, pjap) in [
        ("exact", GradientMode::ExactMoments, None),
        ("minibatch", GradientMode::Minibatch, None),
        ("minibatch_pjap", GradientMode::Minibatch, Some(PjapConfig::default())),
    ] {
        let cfg = LearnConfig { steps: 1000, gradient_mode: mode, ..Default::default() };
        g.bench_function(name, |b| {
            b.iter(|| train_offline(&poly, &data, JointPolicy::new(0.0, 0.0), &cfg, pjap.as_ref(), 0).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sampling, gradients, training);
criterion_main!(benches);
