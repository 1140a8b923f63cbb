use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gridmask_core::agent::{AgentPair, Experience, Hyperparameters, QNetwork};
use gridmask_core::env::Observation;
use gridmask_core::masking::exploit_joint;
use gridmask_core::oracle::{brute_force, decomposed};
use gridmask_core::{builtin_feeder, solve, EnvConfig, Environment, TrainingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn power_flow(c: &mut Criterion) {
    let f13 = builtin_feeder("ieee13").unwrap();
    let f123 = builtin_feeder("ieee123").unwrap();
    let s13 = vec![true; f13.breaker_count()];
    let s123 = vec![true; f123.breaker_count()];
    c.bench_function("solve/ieee13", |b| b.iter(|| solve(black_box(&f13), black_box(&s13))));
    c.bench_function("solve/ieee123", |b| b.iter(|| solve(black_box(&f123), black_box(&s123))));
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = QNetwork::new(&[5, 64, 64, 10], &mut rng);
    let x = [1.0, 0.0, 1.0, 1.0, 0.0];
    c.bench_function("forward/5-64-64-10", |b| b.iter(|| net.forward(black_box(&x))));

    let h = Hyperparameters::default();
    let mut pair = AgentPair::new(&h.layer_sizes(5, 10), &mut rng);
    let batch: Vec<Experience> = (0..h.batch_size)
        .map(|_| {
            let bits = |rng: &mut ChaCha8Rng| Observation { bits: (0..5).map(|_| rng.gen()).collect() };
            Experience { o: bits(&mut rng), a: rng.gen_range(0..10), r: rng.gen(), o_next: bits(&mut rng) }
        })
        .collect();
    let refs: Vec<&Experience> = batch.iter().collect();
    c.bench_function("train_step/batch32", |b| b.iter(|| pair.train_step(black_box(&refs), &h)));
}

fn selection(c: &mut Criterion) {
    let env = Environment::new(builtin_feeder("ieee123").unwrap(), EnvConfig::default());
    let obs = env.observations();
    // Closure-favouring Q-values force demotions through the mask.
    let q: Vec<Vec<f64>> = env
        .action_counts()
        .iter()
        .map(|&n| (0..n).map(|i| if i % 2 == 1 { 10.0 - i as f64 } else { 0.0 }).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("exploit_joint/ieee123", |b| b.iter(|| exploit_joint(&env, &q, &obs, &mut rng)));
}

fn oracle(c: &mut Criterion) {
    let f13 = builtin_feeder("ieee13").unwrap();
    let f123 = builtin_feeder("ieee123").unwrap();
    c.bench_function("oracle/exhaustive/ieee13", |b| b.iter(|| brute_force(black_box(&f13))));
    c.bench_function("oracle/decomposed/ieee123", |b| b.iter(|| decomposed(black_box(&f123))));
}

fn training(c: &mut Criterion) {
    let f13 = builtin_feeder("ieee13").unwrap();
    let cfg = TrainingConfig { episodes: 20, seed: 1, ..Default::default() };
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("ieee13/20-episodes", |b| b.iter(|| gridmask_core::train(&f13, &cfg)));
    g.finish();
}

criterion_group!(benches, power_flow, network, selection, oracle, training);
criterion_main!(benches);
