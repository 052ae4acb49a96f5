use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, NnError, ParameterStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Tensor,
    pub second: Tensor,
}

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    moments: BTreeMap<String, Moments>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            moments: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }

    /// Forget all moment estimates and restart the step counter.
    pub fn reset(&mut self) {
        self.moments.clear();
        self.step = 0;
    }

    /// Drop moments for one parameter entirely.
    pub fn forget(&mut self, name: &str) {
        self.moments.remove(name);
    }

    /// Zero the moment estimates at the given flat indices of one parameter.
    pub fn zero_entries(&mut self, name: &str, indices: &[usize]) {
        if let Some(m) = self.moments.get_mut(name) {
            for &i in indices {
                m.first.data_mut()[i] = 0.0;
                m.second.data_mut()[i] = 0.0;
            }
        }
    }

    /// One update of every trainable parameter in `params`.
    pub fn apply(&mut self, params: &mut ParameterStore, grads: &Gradients) -> Result<(), NnError> {
        for (name, entry) in params.iter() {
            if !entry.trainable {
                continue;
            }
            let g = grads
                .get(name)
                .ok_or_else(|| NnError::MissingGradient(name.clone()))?;
            if g.shape() != entry.current.shape() {
                return Err(NnError::Shape(format!(
                    "gradient for {name}: {:?} vs parameter {:?}",
                    g.shape(),
                    entry.current.shape()
                )));
            }
            if !g.is_finite() {
                return Err(NnError::NonFinite(format!("gradient of {name}")));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (name, entry) in params.iter_mut() {
            if !entry.trainable {
                continue;
            }
            let g = &grads[name];
            let shape = entry.current.shape().to_vec();
            let m = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| Moments {
                    first: Tensor::zeros(&shape),
                    second: Tensor::zeros(&shape),
                });
            if m.first.shape() != shape.as_slice() {
                m.first = Tensor::zeros(&shape);
                m.second = Tensor::zeros(&shape);
            }
            let w = entry.current.data_mut();
            let m1 = m.first.data_mut();
            let m2 = m.second.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                m1[i] = beta1 * m1[i] + (1.0 - beta1) * gi;
                m2[i] = beta2 * m2[i] + (1.0 - beta2) * gi * gi;
                let mhat = m1[i] / bc1;
                let vhat = m2[i] / bc2;
                w[i] -= learning_rate * mhat / (vhat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::InitSampler;

    fn scalar_store(v: f64) -> ParameterStore {
        let mut p = ParameterStore::new();
        p.insert("w", Tensor::scalar(v), InitSampler::Constant { value: 0.0 }, true);
        p
    }

    fn grads(v: f64) -> Gradients {
        let mut g = Gradients::new();
        g.insert("w".into(), Tensor::scalar(v));
        g
    }

    /// Direct evaluation of the bias-corrected Adam recurrence.
    fn adam_oracle(w0: f64, gs: &[f64], c: AdamConfig) -> f64 {
        let (mut m, mut v, mut w) = (0.0, 0.0, w0);
        for (t, g) in gs.iter().enumerate() {
            let t = (t + 1) as f64;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mh = m / (1.0 - c.beta1.powf(t));
            let vh = v / (1.0 - c.beta2.powf(t));
            w -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
        }
        w
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(1.25);
        let mut s = AdamState::new(AdamConfig::default());
        s.apply(&mut p, &grads(0.0)).unwrap();
        assert_eq!(p.tensor("w").unwrap().item(), 1.25);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn one_step_matches_formula() {
        // With bias correction the first step is lr * g / (|g| + eps').
        let c = AdamConfig::default();
        let mut p = scalar_store(1.0);
        let mut s = AdamState::new(c);
        s.apply(&mut p, &grads(0.3)).unwrap();
        let expected = 1.0 - 5e-4 * 0.3 / (0.3 + 1e-8);
        assert!((p.tensor("w").unwrap().item() - expected).abs() < 1e-15);
        assert!((expected - adam_oracle(1.0, &[0.3], c)).abs() < 1e-15);
    }

    #[test]
    fn two_steps_match_formula() {
        let c = AdamConfig::default();
        let mut p = scalar_store(-0.5);
        let mut s = AdamState::new(c);
        s.apply(&mut p, &grads(0.3)).unwrap();
        s.apply(&mut p, &grads(-1.1)).unwrap();
        // m2 = 0.9*0.03 + 0.1*(-1.1) = -0.083, v2 = 0.999*9e-5 + 0.001*1.21 = 0.00129991
        // step 1 moves by -5e-4*0.3/(0.3+1e-8); step 2 by
        // -5e-4 * (-0.083/0.19) / (sqrt(0.00129991/0.001999) + 1e-8)
        let s1 = 5e-4 * 0.3 / (0.3 + 1e-8);
        let mh = -0.083 / (1.0 - 0.81);
        let vh: f64 = 0.00129991 / (1.0 - 0.998001);
        let s2 = 5e-4 * mh / (vh.sqrt() + 1e-8);
        let expected = -0.5 - s1 - s2;
        let got = p.tensor("w").unwrap().item();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - adam_oracle(-0.5, &[0.3, -1.1], c)).abs() < 1e-15);
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = scalar_store(1.0);
        let mut s = AdamState::new(AdamConfig::default());
        let err = s.apply(&mut p, &Gradients::new()).unwrap_err();
        assert!(err.to_string().contains('w'));
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn snapshot_never_updated() {
        let mut p = scalar_store(2.0);
        let mut s = AdamState::new(AdamConfig::default());
        s.apply(&mut p, &grads(1.0)).unwrap();
        assert_eq!(p.get("w").unwrap().init_snapshot.item(), 2.0);
        assert_ne!(p.tensor("w").unwrap().item(), 2.0);
    }

    #[test]
    fn frozen_entries_skipped() {
        let mut p = ParameterStore::new();
        p.insert("f", Tensor::scalar(1.0), InitSampler::Constant { value: 0.0 }, false);
        let mut s = AdamState::new(AdamConfig::default());
        s.apply(&mut p, &Gradients::new()).unwrap();
        assert_eq!(p.tensor("f").unwrap().item(), 1.0);
    }
}
