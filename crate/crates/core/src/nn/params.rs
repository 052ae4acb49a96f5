use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Distribution family a parameter tensor was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InitSampler {
    /// `U(-b, b)` with `b = scale * sqrt(6 / fan_in)`.
    HeUniform { fan_in: usize, scale: f64 },
    /// `U(-b, b)` with `b = scale / sqrt(fan_in)`.
    FanInUniform { fan_in: usize, scale: f64 },
    Constant { value: f64 },
}

impl InitSampler {
    pub fn bound(&self) -> f64 {
        match *self {
            InitSampler::HeUniform { fan_in, scale } => scale * (6.0 / fan_in.max(1) as f64).sqrt(),
            InitSampler::FanInUniform { fan_in, scale } => scale / (fan_in.max(1) as f64).sqrt(),
            InitSampler::Constant { value } => value.abs(),
        }
    }

    pub fn sample_value<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitSampler::Constant { value } => value,
            _ => {
                let b = self.bound();
                rng.random_range(-b..=b)
            }
        }
    }

    /// Fresh tensor of the given shape drawn from this distribution.
    pub fn sample<R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.sample_value(rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape product matches")
    }

    /// Mean and variance of the distribution.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            InitSampler::Constant { value } => (value, 0.0),
            _ => {
                let b = self.bound();
                (0.0, b * b / 3.0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub current: Tensor,
    /// Value at the start of the run; regenerative regularization pulls
    /// toward this.
    pub init_snapshot: Tensor,
    pub sampler: InitSampler,
    /// Frozen entries are skipped by the optimizer.
    pub trainable: bool,
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Draws a new entry; its snapshot equals the draw.
    pub fn insert_sampled<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        sampler: InitSampler,
        rng: &mut R,
    ) {
        let t = sampler.sample(shape, rng);
        self.insert(name, t, sampler, true);
    }

    pub fn insert(&mut self, name: &str, current: Tensor, sampler: InitSampler, trainable: bool) {
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                init_snapshot: current.clone(),
                current,
                sampler,
                trainable,
            },
        );
    }

    pub fn remove(&mut self, name: &str) -> Option<ParamEntry> {
        self.entries.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry, NnError> {
        self.entries
            .get(name)
            .ok_or_else(|| NnError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry, NnError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParameter(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, NnError> {
        Ok(&self.get(name)?.current)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all entries.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|e| e.current.len()).sum()
    }

    /// All current values concatenated in name order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for e in self.entries.values() {
            out.extend_from_slice(e.current.data());
        }
        out
    }

    /// Redraws `current` for every entry; the snapshot follows when
    /// `reset_snapshot` is set.
    pub fn resample_all<R: Rng + ?Sized>(&mut self, rng: &mut R, reset_snapshot: bool) {
        for e in self.entries.values_mut() {
            e.current = e.sampler.sample(e.current.shape(), rng);
            if reset_snapshot {
                e.init_snapshot = e.current.clone();
            }
        }
    }
}
