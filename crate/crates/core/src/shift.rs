//! Round-to-round distribution shift.
//!
//! * `Permute`: the same `k` layouts every round; observation cells are
//!   shuffled by a per-round bijection (identity in round 0).
//! * `Window`: `k` fresh layouts each round; earlier ones are dropped.
//! * `Expand`: `k` fresh layouts each round, appended to all earlier ones.
//!
//! Train and held-out test seeds come from one seed stream, so every round
//! draws from the same layout distribution and the two sets never overlap.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, GridworldInstance, N_CELLS, N_CHANNELS};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Permute,
    Window,
    Expand,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Permute => "permute",
            Protocol::Window => "window",
            Protocol::Expand => "expand",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = ShiftError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "permute" => Ok(Protocol::Permute),
            "window" => Ok(Protocol::Window),
            "expand" => Ok(Protocol::Expand),
            other => Err(ShiftError::UnknownProtocol(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ShiftError {
    #[error("round {round} out of range for a {n_rounds}-round plan")]
    RoundOutOfRange { round: usize, n_rounds: usize },
    #[error("cell map is not a bijection over {N_CELLS} positions: {0}")]
    NotBijective(String),
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("invalid plan: {0}")]
    Config(String),
}

/// Bijection over the 121 cell positions. Position `p` moves to `map[p]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CellPermutation {
    map: Vec<usize>,
}

impl TryFrom<Vec<usize>> for CellPermutation {
    type Error = ShiftError;
    fn try_from(map: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(map)
    }
}

impl From<CellPermutation> for Vec<usize> {
    fn from(p: CellPermutation) -> Self {
        p.map
    }
}

impl CellPermutation {
    pub fn new(map: Vec<usize>) -> Result<Self, ShiftError> {
        if map.len() != N_CELLS {
            return Err(ShiftError::NotBijective(format!("length {}", map.len())));
        }
        let mut seen = vec![false; N_CELLS];
        for &t in &map {
            if t >= N_CELLS || std::mem::replace(&mut seen[t], true) {
                return Err(ShiftError::NotBijective(format!("target {t} invalid or repeated")));
            }
        }
        Ok(Self { map })
    }

    pub fn identity() -> Self {
        Self {
            map: (0..N_CELLS).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..N_CELLS).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &t)| i == t)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; N_CELLS];
        for (p, &t) in self.map.iter().enumerate() {
            inv[t] = p;
        }
        Self { map: inv }
    }

    /// Moves each 1x1x4 patch; channel order within a patch is preserved.
    pub fn apply(&self, obs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; obs.len()];
        self.apply_into(obs, &mut out);
        out
    }

    pub fn apply_into(&self, obs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(obs.len(), N_CELLS * N_CHANNELS);
        for (p, &t) in self.map.iter().enumerate() {
            out[t * N_CHANNELS..(t + 1) * N_CHANNELS]
                .copy_from_slice(&obs[p * N_CHANNELS..(p + 1) * N_CHANNELS]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub protocol: Protocol,
    pub n_rounds: usize,
    pub k: usize,
    /// Seeds introduced in each round (fresh for window/expand; round 0 only
    /// for permute).
    pub new_seeds: Vec<Vec<u64>>,
    pub test_seeds: Vec<u64>,
    /// One map per round; all identity except under `Permute`.
    pub permutations: Vec<CellPermutation>,
    pub env: EnvConfig,
}

impl RoundPlan {
    pub fn new(
        protocol: Protocol,
        n_rounds: usize,
        k: usize,
        n_test: usize,
        env: EnvConfig,
        plan_seed: u64,
    ) -> Result<Self, ShiftError> {
        if n_rounds == 0 || k == 0 {
            return Err(ShiftError::Config("n_rounds and k must be positive".into()));
        }
        let mut r = rng::Rng::seed_from_u64(plan_seed);
        let mut used = BTreeSet::new();
        let mut draw = |r: &mut rng::Rng, n: usize| -> Vec<u64> {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let s: u64 = r.random();
                if used.insert(s) {
                    out.push(s);
                }
            }
            out
        };
        let test_seeds = draw(&mut r, n_test);
        let seed_rounds = match protocol {
            Protocol::Permute => 1,
            Protocol::Window | Protocol::Expand => n_rounds,
        };
        let new_seeds = (0..seed_rounds).map(|_| draw(&mut r, k)).collect();

        let mut permutations = vec![CellPermutation::identity()];
        for _ in 1..n_rounds {
            let p = match protocol {
                Protocol::Permute => loop {
                    let p = CellPermutation::random(&mut r);
                    if !permutations.contains(&p) {
                        break p;
                    }
                },
                _ => CellPermutation::identity(),
            };
            permutations.push(p);
        }
        Ok(Self {
            protocol,
            n_rounds,
            k,
            new_seeds,
            test_seeds,
            permutations,
            env,
        })
    }

    fn check(&self, round: usize) -> Result<(), ShiftError> {
        if round >= self.n_rounds {
            return Err(ShiftError::RoundOutOfRange {
                round,
                n_rounds: self.n_rounds,
            });
        }
        Ok(())
    }

    /// Seeds of the instances available for training in `round`.
    pub fn active_seeds(&self, round: usize) -> Result<Vec<u64>, ShiftError> {
        self.check(round)?;
        Ok(match self.protocol {
            Protocol::Permute => self.new_seeds[0].clone(),
            Protocol::Window => self.new_seeds[round].clone(),
            Protocol::Expand => self.new_seeds[..=round].concat(),
        })
    }

    pub fn active_instances(&self, round: usize) -> Result<Vec<GridworldInstance>, ShiftError> {
        Ok(self
            .active_seeds(round)?
            .into_iter()
            .map(|s| GridworldInstance::sample(s, &self.env))
            .collect())
    }

    pub fn test_instances(&self) -> Vec<GridworldInstance> {
        self.test_seeds
            .iter()
            .map(|&s| GridworldInstance::sample(s, &self.env))
            .collect()
    }

    /// Observation map in force during `round`; test episodes share it.
    pub fn permutation(&self, round: usize) -> Result<&CellPermutation, ShiftError> {
        self.check(round)?;
        Ok(&self.permutations[round])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(p: Protocol) -> RoundPlan {
        RoundPlan::new(p, 4, 100, 50, EnvConfig::default(), 11).unwrap()
    }

    #[test]
    fn expand_grows_by_k() {
        let plan = plan(Protocol::Expand);
        for r in 0..4 {
            assert_eq!(plan.active_seeds(r).unwrap().len(), 100 * (r + 1));
        }
        let r1: BTreeSet<_> = plan.active_seeds(1).unwrap().into_iter().collect();
        assert!(plan.active_seeds(0).unwrap().iter().all(|s| r1.contains(s)));
    }

    #[test]
    fn window_rounds_disjoint() {
        let plan = plan(Protocol::Window);
        let a: BTreeSet<_> = plan.active_seeds(0).unwrap().into_iter().collect();
        let b: BTreeSet<_> = plan.active_seeds(1).unwrap().into_iter().collect();
        assert_eq!(a.len(), 100);
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn permute_reuses_seeds_and_shuffles() {
        let plan = plan(Protocol::Permute);
        assert_eq!(plan.active_seeds(0).unwrap(), plan.active_seeds(3).unwrap());
        assert!(plan.permutation(0).unwrap().is_identity());
        for i in 1..4 {
            assert!(!plan.permutation(i).unwrap().is_identity());
            for j in 0..i {
                assert_ne!(plan.permutation(i).unwrap(), plan.permutation(j).unwrap());
            }
        }
    }

    #[test]
    fn test_seeds_disjoint_from_train() {
        for p in [Protocol::Permute, Protocol::Window, Protocol::Expand] {
            let plan = plan(p);
            let test: BTreeSet<_> = plan.test_seeds.iter().copied().collect();
            assert_eq!(test.len(), 50);
            for r in 0..4 {
                assert!(plan.active_seeds(r).unwrap().iter().all(|s| !test.contains(s)));
            }
        }
    }

    #[test]
    fn round_out_of_range() {
        let plan = plan(Protocol::Window);
        assert_eq!(
            plan.active_seeds(4),
            Err(ShiftError::RoundOutOfRange {
                round: 4,
                n_rounds: 4
            })
        );
    }

    #[test]
    fn non_bijective_map_rejected() {
        let mut m: Vec<usize> = (0..N_CELLS).collect();
        m[3] = 4;
        assert!(CellPermutation::new(m).is_err());
        assert!(CellPermutation::new(vec![0; 5]).is_err());
    }

    #[test]
    fn plan_is_deterministic() {
        assert_eq!(plan(Protocol::Permute), plan(Protocol::Permute));
    }
}
