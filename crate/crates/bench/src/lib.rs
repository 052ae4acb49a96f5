//! Fixtures shared by the kernel benchmarks in `benches/`.

use plasticity_core::nn::{NetworkSpec, ParameterStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default network with freshly drawn parameters.
pub fn default_network(seed: u64) -> (NetworkSpec, ParameterStore) {
    let spec = NetworkSpec::default();
    let params = spec
        .init_params(&mut ChaCha8Rng::seed_from_u64(seed))
        .expect("default spec is valid");
    (spec, params)
}

/// A `[rows, cols]` batch of sparse binary inputs, roughly one-hot dense.
pub fn binary_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// A synthetic trajectory: rewards in {-1, 0, 1}, values in [-1, 1], and
/// an episode boundary every `episode_len` steps.
pub fn trajectory(len: usize, episode_len: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rewards = (0..len).map(|_| rng.random_range(-1..=1) as f64).collect();
    let values = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dones = (0..len).map(|t| (t + 1) % episode_len == 0).collect();
    (rewards, values, dones)
}
