//! Proximal policy optimization: rollout storage, GAE, the clipped
//! surrogate objective and the round training loop.

mod buffer;
mod loss;
mod trainer;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvError;
use crate::nn::{AdamConfig, AdamState, NetworkSpec, NnError, ParameterStore, Tape, Var};

pub use buffer::{gae, RolloutBuffer, Transition};
pub use loss::{ppo_loss, LossVars, Minibatch, LOG_RATIO_CLAMP};
pub use trainer::{RoundOutcome, Trainer, DEAD_UNIT_BATCH};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PpoError {
    #[error("rollout buffer is empty")]
    EmptyBuffer,
    #[error("rollout buffer is already full")]
    BufferFull,
    #[error("rollout buffer holds {len} of {capacity} transitions; updates need a full buffer")]
    BufferNotFull { len: usize, capacity: usize },
    #[error("invalid PPO configuration: {0}")]
    Config(String),
    #[error("non-finite {term} term")]
    NonFinite { term: &'static str },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl PpoError {
    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, PpoError::NonFinite { .. } | PpoError::Nn(NnError::NonFinite(_)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub buffer_size: usize,
    pub update_epochs: usize,
    /// Parallel rollout slots; one environment step each per iteration.
    pub n_slots: usize,
    pub normalize_advantages: bool,
    /// Global gradient-norm clip; `None` leaves gradients untouched.
    pub max_grad_norm: Option<f64>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.02,
            value_coef: 0.5,
            learning_rate: 5e-4,
            minibatch_size: 64,
            buffer_size: 1024,
            update_epochs: 3,
            n_slots: 8,
            normalize_advantages: true,
            max_grad_norm: None,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let positive = [
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("clip_epsilon", self.clip_epsilon),
            ("learning_rate", self.learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PpoError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(PpoError::Config("gamma and gae_lambda must not exceed 1".into()));
        }
        if self.clip_epsilon >= 1.0 {
            return Err(PpoError::Config(format!(
                "clip_epsilon must be below 1, got {}",
                self.clip_epsilon
            )));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(PpoError::Config("loss coefficients must be non-negative".into()));
        }
        if self.minibatch_size == 0 || self.update_epochs == 0 || self.n_slots == 0 {
            return Err(PpoError::Config(
                "minibatch_size, update_epochs and n_slots must be positive".into(),
            ));
        }
        if self.buffer_size % self.n_slots != 0 || self.buffer_size < self.minibatch_size {
            return Err(PpoError::Config(format!(
                "buffer_size {} must be a multiple of n_slots {} and at least one minibatch",
                self.buffer_size, self.n_slots
            )));
        }
        if matches!(self.max_grad_norm, Some(c) if !(c > 0.0)) {
            return Err(PpoError::Config("max_grad_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// A network together with its parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct Agent {
    pub spec: NetworkSpec,
    pub params: ParameterStore,
    pub adam: AdamState,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        spec: NetworkSpec,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let params = spec.init_params(rng)?;
        Ok(Self {
            spec,
            params,
            adam: AdamState::new(adam),
        })
    }
}

/// Record of an intervention acting on the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HookEvent {
    pub epoch: usize,
    pub round: usize,
    pub kind: String,
    /// Number of scalar parameter values modified.
    pub params_touched: usize,
    /// How many times the hook fired (per-step hooks are aggregated per
    /// epoch).
    pub firings: usize,
}

/// Extension points of the update loop.
pub trait UpdateHooks {
    /// Extra loss term recorded on the same tape as the PPO objective.
    fn penalty<'a>(
        &self,
        _tape: &mut Tape<'a>,
        _params: &'a ParameterStore,
    ) -> Result<Option<Var>, NnError> {
        Ok(None)
    }

    /// Runs after every optimizer step. Returns the number of values
    /// modified when the hook acted.
    fn after_step(&mut self, _agent: &mut Agent) -> Result<Option<usize>, NnError> {
        Ok(None)
    }

    /// Name used for events aggregated from [`UpdateHooks::after_step`].
    fn step_hook_name(&self) -> &str {
        "step_hook"
    }

    /// Runs after each epoch's updates and metrics. `epoch` counts epochs
    /// from 1 across the whole run.
    fn after_epoch(
        &mut self,
        _epoch: usize,
        _agent: &mut Agent,
        _buffer: &RolloutBuffer,
    ) -> Result<Option<(String, usize)>, NnError> {
        Ok(None)
    }
}

/// No interventions: plain PPO.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoHooks;

impl UpdateHooks for NoHooks {}
