use crate::nn::{NetVars, Tape, Var};

use super::{PpoConfig, PpoError};

/// Log-ratio bound before exponentiation.
pub const LOG_RATIO_CLAMP: f64 = 20.0;

/// Per-sample inputs to the PPO objective.
#[derive(Clone, Debug, Default)]
pub struct Minibatch {
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Tape handles of the objective's parts.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    /// `-E[min(rho * A, clip(rho) * A)]`
    pub policy: Var,
    /// `E[(V - R)^2]`, before the value coefficient.
    pub value: Var,
    /// Mean policy entropy.
    pub entropy: Var,
}

/// Records the clipped-surrogate objective
/// `policy + c_v * value - beta * entropy` on `tape`.
pub fn ppo_loss(
    tape: &mut Tape<'_>,
    net: &NetVars,
    batch: &Minibatch,
    config: &PpoConfig,
) -> Result<LossVars, PpoError> {
    let m = batch.actions.len();
    if batch.old_log_probs.len() != m || batch.advantages.len() != m || batch.returns.len() != m {
        return Err(PpoError::Config("minibatch columns have different lengths".into()));
    }
    let logp_all = tape.log_softmax(net.logits)?;
    let logp = tape.gather(logp_all, &batch.actions)?;

    let old = tape.constant(crate::nn::Tensor::new(vec![m], batch.old_log_probs.clone())?);
    let adv = tape.constant(crate::nn::Tensor::new(vec![m], batch.advantages.clone())?);
    let log_ratio = tape.sub(logp, old)?;
    let log_ratio = tape.clamp(log_ratio, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
    let ratio = tape.exp(log_ratio);
    let unclipped = tape.mul(ratio, adv)?;
    let eps = config.clip_epsilon;
    let clipped_ratio = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
    let clipped = tape.mul(clipped_ratio, adv)?;
    let surrogate = tape.min(unclipped, clipped)?;
    let surrogate = tape.mean(surrogate);
    let policy = tape.scale(surrogate, -1.0);

    let values = net.values;
    let n_values = tape.value(values).len();
    if n_values != m {
        return Err(PpoError::Config(format!("{n_values} value predictions for {m} samples")));
    }
    // values are [m, 1]; compare against returns laid out the same way
    let returns = tape.constant(crate::nn::Tensor::new(vec![m, 1], batch.returns.clone())?);
    let err = tape.sub(values, returns)?;
    let sq = tape.square(err);
    let value = tape.mean(sq);

    let probs = tape.exp(logp_all);
    let plogp = tape.mul(probs, logp_all)?;
    let neg_entropy = tape.row_sum(plogp)?;
    let neg_entropy = tape.mean(neg_entropy);
    let entropy = tape.scale(neg_entropy, -1.0);

    for (term, v) in [("policy", policy), ("value", value), ("entropy", entropy)] {
        if !tape.value(v).item().is_finite() {
            return Err(PpoError::NonFinite { term });
        }
    }

    let weighted_value = tape.scale(value, config.value_coef);
    let weighted_entropy = tape.scale(entropy, -config.entropy_coef);
    let total = tape.add(policy, weighted_value)?;
    let total = tape.add(total, weighted_entropy)?;
    Ok(LossVars {
        total,
        policy,
        value,
        entropy,
    })
}
