//! Seed derivation. Every source of randomness in a run gets its own ChaCha
//! stream keyed by (master seed, replicate, purpose, sub-index), so streams
//! never alias and consuming one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Network initialization.
    Init = 1,
    /// Round plan: environment seeds and permutation maps.
    Plan = 2,
    /// Action sampling and per-episode instance choice.
    Rollout = 3,
    /// Minibatch shuffling.
    Minibatch = 4,
    /// Fresh initialization draws made by interventions.
    Intervention = 5,
    /// Batches used for dead-unit and dormancy measurements.
    Diagnostics = 6,
    /// Held-out evaluation episodes.
    Evaluation = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, replicate: u64, stream: Stream, index: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ replicate.wrapping_mul(0xA24B_AED4_963E_E407));
    h = splitmix64(h ^ (stream as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25));
    splitmix64(h ^ index)
}

pub fn stream(master: u64, replicate: u64, stream: Stream, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, replicate, stream, index))
}
