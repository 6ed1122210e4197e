use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pkgrec_bench::fixture;
use pkgrec_core::eval::{evaluate_validation, DEFAULT_KS};
use pkgrec_core::model::propagate;
use pkgrec_core::seed::stage_rng;
use pkgrec_core::trainer::{batch_gradients, sample_negatives, sample_rounds};

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("propagate");
    group.sample_size(20);
    for users in [200, 800] {
        let f = fixture(users);
        let profiles = f.experiment.profiles();
        group.bench_with_input(BenchmarkId::from_parameter(users), &users, |b, _| {
            b.iter(|| propagate(&f.params, &f.model, &profiles, &f.experiment.train_graph).unwrap())
        });
    }
    group.finish();
}

fn train_batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(20);
    for users in [200, 800] {
        let f = fixture(users);
        let profiles = f.experiment.profiles();
        let g = &f.experiment.train_graph;
        let pairs: Vec<_> = f
            .experiment
            .split
            .train
            .iter()
            .take(f.config.train.batch_size)
            .copied()
            .collect();
        let batch = sample_negatives(&pairs, &f.experiment.graph, 0).unwrap();
        let rounds = sample_rounds(
            &profiles.active_indices(),
            f.config.train.pair_fraction,
            f.config.train.pair_rounds,
            &mut stage_rng(0, "pair-sample", 0),
        );
        group.bench_with_input(BenchmarkId::from_parameter(users), &users, |b, _| {
            b.iter(|| {
                batch_gradients(
                    &f.params,
                    &f.model,
                    &batch,
                    &profiles,
                    g,
                    f.config.train.lambda_pair,
                    &rounds,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn ranking(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(20);
    for users in [200, 800] {
        let f = fixture(users);
        let g = &f.experiment.train_graph;
        let z = propagate(&f.params, &f.model, &f.experiment.profiles(), g)
            .unwrap()
            .z;
        group.bench_with_input(BenchmarkId::from_parameter(users), &users, |b, _| {
            b.iter(|| evaluate_validation(&z, g, &f.experiment.split, &DEFAULT_KS).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward, train_batch, ranking);
criterion_main!(benches);
