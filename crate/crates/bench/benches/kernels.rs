use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use plasticity_bench::{binary_batch, default_network, trajectory};
use plasticity_core::env::{Action, EnvConfig, GridworldInstance, OBS_LEN};
use plasticity_core::nn::{forward, AdamConfig, Tape};
use plasticity_core::ppo::{gae, Agent, NoHooks, PpoConfig, Trainer};
use plasticity_core::shift::CellPermutation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn network(c: &mut Criterion) {
    let (spec, params) = default_network(0);
    let x = binary_batch(64, OBS_LEN, 1);
    c.bench_function("forward_64", |b| b.iter(|| forward(&spec, &params, black_box(&x)).unwrap()));
    c.bench_function("forward_backward_64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let obs = tape.constant_ref(&x);
            let net = spec.build(&mut tape, &params, obs).unwrap();
            let s1 = tape.sum(net.logits);
            let s2 = tape.sum(net.values);
            let loss = tape.add(s1, s2).unwrap();
            tape.backward(loss).unwrap()
        })
    });
}

fn environment(c: &mut Criterion) {
    let config = EnvConfig::default();
    let inst = GridworldInstance::sample(3, &config);
    c.bench_function("env_episode", |b| {
        b.iter_batched(
            || (inst.clone(), ChaCha8Rng::seed_from_u64(4)),
            |(mut env, mut rng)| {
                env.reset();
                loop {
                    let a = Action::ALL[rng.random_range(0..4)];
                    if env.step(a).unwrap().done {
                        break;
                    }
                }
                env
            },
            BatchSize::SmallInput,
        )
    });
}

fn advantages(c: &mut Criterion) {
    let (r, v, d) = trajectory(1024, 100, 5);
    c.bench_function("gae_1024", |b| {
        b.iter(|| gae(black_box(&r), black_box(&v), black_box(&d), 0.0, 0.99, 0.95).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let config = PpoConfig::default();
    let insts: Vec<_> = (0..20).map(|s| GridworldInstance::sample(s, &EnvConfig::default())).collect();
    let perm = CellPermutation::identity();
    let iterations = config.buffer_size / config.n_slots;
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("one_epoch", |b| {
        b.iter_batched(
            || {
                let (spec, _) = default_network(0);
                let agent = Agent::new(spec, AdamConfig::default(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
                (agent, Trainer::new(config.clone(), 7, 0).unwrap())
            },
            |(mut agent, mut trainer)| {
                trainer.train_round(&mut agent, &insts, &perm, 0, iterations, &mut NoHooks).unwrap();
                agent
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, network, environment, advantages, training);
criterion_main!(benches);
