//! Per-epoch diagnostics (policy entropy, weight magnitude, weight change,
//! gradient magnitude, dead units), reward normalization and held-out
//! evaluation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::GridworldInstance;
use crate::nn::{forward, ActivationTrace, Gradients, NetworkSpec, NnError, ParameterStore, Tensor};
use crate::shift::CellPermutation;

/// Number of trailing episodes averaged for a round's reward.
pub const ROUND_TAIL_EPISODES: usize = 50;

/// One line of `metrics.ldj`. Field order is the on-disk order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub round: usize,
    /// Mean return of episodes completed during this epoch.
    pub train_reward: Option<f64>,
    pub episodes: usize,
    /// Held-out mean return; set on the last epoch of a round.
    pub test_reward: Option<f64>,
    pub entropy: f64,
    pub weight_mag: f64,
    pub weight_diff: f64,
    pub grad_norm: f64,
    pub dead_unit_fraction: f64,
}

impl MetricsRecord {
    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Entropy => self.entropy,
            Metric::WeightMag => self.weight_mag,
            Metric::WeightDiff => self.weight_diff,
            Metric::GradNorm => self.grad_norm,
            Metric::DeadUnits => self.dead_unit_fraction,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.entropy, self.weight_mag, self.weight_diff, self.grad_norm, self.dead_unit_fraction]
            .iter()
            .chain(self.train_reward.iter())
            .chain(self.test_reward.iter())
            .all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Entropy,
    WeightMag,
    WeightDiff,
    GradNorm,
    DeadUnits,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Entropy,
        Metric::WeightMag,
        Metric::WeightDiff,
        Metric::GradNorm,
        Metric::DeadUnits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Entropy => "entropy",
            Metric::WeightMag => "weight_mag",
            Metric::WeightDiff => "weight_diff",
            Metric::GradNorm => "grad_norm",
            Metric::DeadUnits => "dead_units",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "dead_unit_fraction" && *m == Metric::DeadUnits))
            .ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// Copy of every parameter's current values, for measuring change.
pub type ParamSnapshot = BTreeMap<String, Vec<f64>>;

pub fn snapshot(params: &ParameterStore) -> ParamSnapshot {
    params
        .iter()
        .map(|(n, e)| (n.clone(), e.current.data().to_vec()))
        .collect()
}

/// Global L2 norm of all parameters.
pub fn weight_mag(params: &ParameterStore) -> f64 {
    params.iter().map(|(_, e)| e.current.sum_sq()).sum::<f64>().sqrt()
}

/// L2 norm of the change since `prev`, over parameters present in both with
/// matching size.
pub fn weight_diff(params: &ParameterStore, prev: &ParamSnapshot) -> f64 {
    params
        .iter()
        .filter_map(|(n, e)| {
            let p = prev.get(n)?;
            (p.len() == e.current.len()).then(|| {
                e.current
                    .data()
                    .iter()
                    .zip(p)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
        })
        .sum::<f64>()
        .sqrt()
}

pub fn grad_norm(grads: &Gradients) -> f64 {
    grads.values().map(Tensor::sum_sq).sum::<f64>().sqrt()
}

/// Entropy of the softmax distribution over one row of logits.
pub fn policy_entropy(logits: &[f64]) -> f64 {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    let lz = z.ln();
    -logits
        .iter()
        .map(|l| {
            let lp = l - mx - lz;
            lp.exp() * lp
        })
        .sum::<f64>()
}

/// Per layer, per unit: true when the unit's output is zero for every row.
pub fn dead_unit_mask(trace: &ActivationTrace) -> Vec<Vec<bool>> {
    trace
        .layers
        .iter()
        .map(|t| {
            let (rows, cols) = (t.rows(), t.cols());
            (0..cols)
                .map(|j| (0..rows).all(|i| t.data()[i * cols + j] <= 0.0))
                .collect()
        })
        .collect()
}

/// Fraction of rectified hidden units that never output a strictly positive
/// value on `batch`. CReLU halves count as separate units.
pub fn dead_unit_fraction(
    spec: &NetworkSpec,
    params: &ParameterStore,
    batch: &Tensor,
) -> Result<f64, NnError> {
    let out = forward(spec, params, batch)?;
    let mask = dead_unit_mask(&out.trace);
    let total: usize = mask.iter().map(Vec::len).sum();
    let dead = mask.iter().flatten().filter(|&&d| d).count();
    Ok(if total == 0 { 0.0 } else { dead as f64 / total as f64 })
}

/// Mean of the final `n` values (all of them when fewer are available).
pub fn tail_mean(values: &[f64], n: usize) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    if values.len() < n {
        log::warn!("only {} episodes available for a {n}-episode tail mean", values.len());
    }
    let tail = &values[values.len().saturating_sub(n)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Per-round statistics shifted so that round 0 is zero.
pub fn normalized_reward(round_means: &[f64]) -> Vec<f64> {
    match round_means.first() {
        Some(&base) => round_means.iter().map(|v| v - base).collect(),
        None => Vec::new(),
    }
}

/// How a metric is compared to its value at initialization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    #[default]
    Ratio,
    Difference,
}

pub fn normalize_to_baseline(value: f64, baseline: f64, mode: BaselineMode) -> f64 {
    match mode {
        BaselineMode::Ratio if baseline != 0.0 => value / baseline,
        BaselineMode::Ratio => value,
        BaselineMode::Difference => value - baseline,
    }
}

/// Chooses actions for a batch of running episodes.
pub trait Policy {
    fn actions<R: Rng + ?Sized>(
        &mut self,
        obs: &Tensor,
        envs: &[&GridworldInstance],
        rng: &mut R,
    ) -> Result<Vec<usize>, NnError>;
}

/// Samples from the softmax of the network's policy logits.
pub struct NetworkPolicy<'a> {
    pub spec: &'a NetworkSpec,
    pub params: &'a ParameterStore,
}

pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> (usize, f64) {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    let lz = z.ln() + mx;
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    let mut choice = logits.len() - 1;
    for (i, l) in logits.iter().enumerate() {
        acc += (l - lz).exp();
        if u < acc {
            choice = i;
            break;
        }
    }
    (choice, logits[choice] - lz)
}

impl Policy for NetworkPolicy<'_> {
    fn actions<R: Rng + ?Sized>(
        &mut self,
        obs: &Tensor,
        _envs: &[&GridworldInstance],
        rng: &mut R,
    ) -> Result<Vec<usize>, NnError> {
        let out = forward(self.spec, self.params, obs)?;
        Ok((0..out.logits.rows())
            .map(|i| sample_categorical(out.logits.row(i), rng).0)
            .collect())
    }
}

/// Mean return of `n_episodes` episodes, episode `i` on
/// `instances[i % len]`, with observations passed through `perm`.
pub fn evaluate<P: Policy, R: Rng + ?Sized>(
    policy: &mut P,
    instances: &[GridworldInstance],
    perm: &CellPermutation,
    n_episodes: usize,
    rng: &mut R,
) -> Result<f64, NnError> {
    if instances.is_empty() || n_episodes == 0 {
        return Err(NnError::Usage("evaluation needs instances and episodes".into()));
    }
    const BATCH: usize = 64;
    let obs_len = crate::env::OBS_LEN;
    let mut total = 0.0;
    let mut start = 0;
    while start < n_episodes {
        let end = (start + BATCH).min(n_episodes);
        let mut envs: Vec<GridworldInstance> =
            (start..end).map(|i| instances[i % instances.len()].clone()).collect();
        let mut returns = vec![0.0; envs.len()];
        for e in envs.iter_mut() {
            e.reset();
        }
        let mut raw = vec![0.0; obs_len];
        loop {
            let live: Vec<usize> = (0..envs.len()).filter(|&i| !envs[i].is_done()).collect();
            if live.is_empty() {
                break;
            }
            let mut data = vec![0.0; live.len() * obs_len];
            for (row, &i) in live.iter().enumerate() {
                envs[i].write_observation(&mut raw);
                perm.apply_into(&raw, &mut data[row * obs_len..(row + 1) * obs_len]);
            }
            let obs = Tensor::new(vec![live.len(), obs_len], data)?;
            let refs: Vec<&GridworldInstance> = live.iter().map(|&i| &envs[i]).collect();
            let acts = policy.actions(&obs, &refs, rng)?;
            for (&i, &a) in live.iter().zip(&acts) {
                let action = crate::env::Action::from_index(a)
                    .ok_or_else(|| NnError::Usage(format!("policy chose action {a}")))?;
                let (r, _) = envs[i]
                    .advance(action)
                    .map_err(|e| NnError::Usage(e.to_string()))?;
                returns[i] += r;
            }
        }
        total += returns.iter().sum::<f64>();
        start = end;
    }
    Ok(total / n_episodes as f64)
}

/// Held-out evaluation of the network's stochastic policy; never mutates
/// parameters.
pub fn evaluate_test<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    params: &ParameterStore,
    instances: &[GridworldInstance],
    perm: &CellPermutation,
    n_episodes: usize,
    rng: &mut R,
) -> Result<f64, NnError> {
    evaluate(&mut NetworkPolicy { spec, params }, instances, perm, n_episodes, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InitSampler;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_magnitude_of_three_four() {
        let mut p = ParameterStore::new();
        p.insert(
            "w",
            Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(),
            InitSampler::Constant { value: 0.0 },
            true,
        );
        assert_eq!(weight_mag(&p), 5.0);
        assert_eq!(weight_diff(&p, &snapshot(&p)), 0.0);
        p.get_mut("w").unwrap().current = Tensor::zeros(&[2]);
        assert_eq!(weight_mag(&p), 0.0);
    }

    #[test]
    fn round_normalization() {
        assert_eq!(normalized_reward(&[5.0, 4.5, 4.2]).last().copied(), Some(4.2 - 5.0));
        assert_eq!(normalized_reward(&[5.0, 4.5])[0], 0.0);
        assert_eq!(normalized_reward(&[2.0, 2.0, 2.0]), vec![0.0; 3]);
        let n = normalized_reward(&[5.0, 4.6, 4.2]);
        assert!((n[2] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn tail_mean_uses_last_values() {
        let v: Vec<f64> = (0..60).map(f64::from).collect();
        assert_eq!(tail_mean(&v, 50), Some((10..60).sum::<i32>() as f64 / 50.0));
        assert_eq!(tail_mean(&[1.0, 3.0], 50), Some(2.0));
        assert_eq!(tail_mean(&[], 50), None);
    }

    #[test]
    fn entropy_bounds() {
        assert!((policy_entropy(&[0.0; 4]) - 4f64.ln()).abs() < 1e-12);
        assert!(policy_entropy(&[1000.0, 0.0, 0.0, 0.0]) < 1e-12);
    }

    #[test]
    fn categorical_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = [0.0, (2.0f64).ln(), f64::NEG_INFINITY, (1.0f64).ln()];
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            let (a, lp) = sample_categorical(&logits, &mut rng);
            counts[a] += 1;
            assert!(lp <= 0.0);
        }
        assert_eq!(counts[2], 0);
        assert!((counts[1] as f64 / 40_000.0 - 0.5).abs() < 0.01);
    }
}
