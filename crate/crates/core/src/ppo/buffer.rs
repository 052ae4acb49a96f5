use crate::nn::Tensor;

use super::PpoError;

/// One environment step as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    /// Log-probability of `action` under the policy that collected it.
    pub log_prob_old: f64,
    pub reward: f64,
    pub value_old: f64,
    /// The episode ended with this step.
    pub done: bool,
}

/// Advantages by backward recursion over a single slot's trajectory.
///
/// `delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)` and
/// `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}`, with
/// `V(s_T) = bootstrap`. Returns `(advantages, returns)` where
/// `returns = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    if n == 0 {
        return Err(PpoError::EmptyBuffer);
    }
    if values.len() != n || dones.len() != n {
        return Err(PpoError::Config(format!(
            "trajectory lengths differ: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Fixed-capacity store laid out step-major over `n_slots` parallel rollouts:
/// transition `i` belongs to slot `i % n_slots`.
#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    capacity: usize,
    n_slots: usize,
    obs_dim: usize,
    obs: Vec<f64>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize, n_slots: usize, obs_dim: usize) -> Result<Self, PpoError> {
        if n_slots == 0 || capacity == 0 || capacity % n_slots != 0 {
            return Err(PpoError::Config(format!(
                "buffer size {capacity} must be a positive multiple of {n_slots} slots"
            )));
        }
        Ok(Self {
            capacity,
            n_slots,
            obs_dim,
            obs: Vec::with_capacity(capacity * obs_dim),
            actions: Vec::with_capacity(capacity),
            log_probs: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            dones: Vec::with_capacity(capacity),
            advantages: Vec::new(),
            returns: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity
    }

    pub fn clear(&mut self) {
        self.obs.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.dones.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    pub fn push(&mut self, t: &Transition) -> Result<(), PpoError> {
        self.push_parts(&t.obs, t.action, t.log_prob_old, t.reward, t.value_old, t.done)
    }

    pub(crate) fn push_parts(
        &mut self,
        obs: &[f64],
        action: usize,
        log_prob_old: f64,
        reward: f64,
        value_old: f64,
        done: bool,
    ) -> Result<(), PpoError> {
        if self.is_full() {
            return Err(PpoError::BufferFull);
        }
        if obs.len() != self.obs_dim {
            return Err(PpoError::Config(format!(
                "observation of length {} in a buffer of width {}",
                obs.len(),
                self.obs_dim
            )));
        }
        self.obs.extend_from_slice(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob_old);
        self.rewards.push(reward);
        self.values.push(value_old);
        self.dones.push(done);
        Ok(())
    }

    pub fn obs_row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dones(&self) -> &[bool] {
        &self.dones
    }

    pub fn advantages(&self) -> &[f64] {
        &self.advantages
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    /// Stacks the observations at `indices` into a `[len, obs_dim]` tensor.
    pub fn gather_obs(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.obs_dim);
        for &i in indices {
            data.extend_from_slice(self.obs_row(i));
        }
        Tensor::new(vec![indices.len(), self.obs_dim], data).expect("row widths match")
    }

    /// GAE per slot. `bootstrap[s]` is `V` of slot `s`'s next observation and
    /// is used only when that slot's final stored step is not terminal.
    pub fn compute_gae(&mut self, bootstrap: &[f64], gamma: f64, lambda: f64) -> Result<(), PpoError> {
        if self.is_empty() {
            return Err(PpoError::EmptyBuffer);
        }
        if !self.is_full() {
            return Err(PpoError::BufferNotFull {
                len: self.len(),
                capacity: self.capacity,
            });
        }
        if bootstrap.len() != self.n_slots {
            return Err(PpoError::Config(format!(
                "{} bootstrap values for {} slots",
                bootstrap.len(),
                self.n_slots
            )));
        }
        let steps = self.capacity / self.n_slots;
        self.advantages = vec![0.0; self.capacity];
        self.returns = vec![0.0; self.capacity];
        for s in 0..self.n_slots {
            let idx: Vec<usize> = (0..steps).map(|t| t * self.n_slots + s).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (adv, ret) = gae(&r, &v, &d, bootstrap[s], gamma, lambda)?;
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = adv[k];
                self.returns[i] = ret[k];
            }
        }
        if self.advantages.iter().any(|a| !a.is_finite()) {
            return Err(PpoError::NonFinite { term: "advantages" });
        }
        Ok(())
    }

    /// Advantages shifted and scaled to zero mean and unit standard deviation.
    pub fn normalized_advantages(&self) -> Vec<f64> {
        let n = self.advantages.len() as f64;
        let mean = self.advantages.iter().sum::<f64>() / n;
        let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt() + 1e-8;
        self.advantages.iter().map(|a| (a - mean) / std).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rewards_zero_values() {
        let (adv, ret) = gae(&[0.0; 5], &[0.0; 5], &[false; 5], 0.0, 0.99, 0.95).unwrap();
        assert!(adv.iter().chain(&ret).all(|&v| v == 0.0));
    }

    #[test]
    fn two_step_trajectory() {
        // r=[1,0], V=[0.5,0.5], done=[false,true], bootstrap 0
        // delta_1 = 0 - 0.5 = -0.5 ; delta_0 = 1 + 0.99*0.5 - 0.5 = 0.995
        // A_1 = -0.5 ; A_0 = 0.995 + 0.99*0.95*(-0.5) = 0.52475
        let (adv, ret) =
            gae(&[1.0, 0.0], &[0.5, 0.5], &[false, true], 0.0, 0.99, 0.95).unwrap();
        assert!((adv[1] + 0.5).abs() < 1e-15);
        assert!((adv[0] - 0.52475).abs() < 1e-12);
        assert!((ret[0] - 1.02475).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_gives_td_residuals() {
        let r = [0.3, -1.0, 2.0, 0.0];
        let v = [0.1, 0.4, -0.2, 0.9];
        let d = [false, true, false, false];
        let (adv, _) = gae(&r, &v, &d, 0.7, 0.9, 0.0).unwrap();
        let deltas = [
            0.3 + 0.9 * 0.4 - 0.1,
            -1.0 - 0.4,
            2.0 + 0.9 * 0.9 - -0.2,
            0.0 + 0.9 * 0.7 - 0.9,
        ];
        for (a, d) in adv.iter().zip(deltas) {
            assert_eq!(*a, d);
        }
    }

    #[test]
    fn empty_trajectory_rejected() {
        assert_eq!(gae(&[], &[], &[], 0.0, 0.99, 0.95), Err(PpoError::EmptyBuffer));
    }

    #[test]
    fn buffer_requires_full_for_gae() {
        let mut b = RolloutBuffer::new(4, 2, 1).unwrap();
        assert_eq!(b.compute_gae(&[0.0, 0.0], 0.99, 0.95), Err(PpoError::EmptyBuffer));
        b.push_parts(&[0.0], 0, -1.0, 1.0, 0.0, false).unwrap();
        assert!(matches!(
            b.compute_gae(&[0.0, 0.0], 0.99, 0.95),
            Err(PpoError::BufferNotFull { .. })
        ));
        for _ in 0..3 {
            b.push_parts(&[0.0], 0, -1.0, 1.0, 0.0, false).unwrap();
        }
        assert_eq!(b.push_parts(&[0.0], 0, -1.0, 1.0, 0.0, false), Err(PpoError::BufferFull));
        b.compute_gae(&[0.0, 0.0], 0.99, 0.95).unwrap();
        for (r, (a, v)) in b.returns().iter().zip(b.advantages().iter().zip(b.values())) {
            assert_eq!(*r, a + v);
        }
    }

    #[test]
    fn slots_are_independent_trajectories() {
        // slot 0 sees rewards, slot 1 sees nothing
        let mut b = RolloutBuffer::new(4, 2, 1).unwrap();
        for t in 0..2 {
            b.push_parts(&[0.0], 0, -1.0, 1.0, 0.0, t == 1).unwrap();
            b.push_parts(&[0.0], 0, -1.0, 0.0, 0.0, false).unwrap();
        }
        b.compute_gae(&[5.0, 0.0], 0.5, 1.0).unwrap();
        // slot 0: A_1 = 1 (terminal, bootstrap ignored), A_0 = 1 + 0.5*1 = 1.5
        assert_eq!(b.advantages()[0], 1.5);
        assert_eq!(b.advantages()[2], 1.0);
        assert_eq!(b.advantages()[1], 0.0);
        assert_eq!(b.advantages()[3], 0.0);
    }
}
