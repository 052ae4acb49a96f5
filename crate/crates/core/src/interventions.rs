//! Intervention catalog. Each intervention is either architectural (fixed
//! when the network is built), continuous (a loss penalty or a hook after
//! every optimizer step) or intermittent (round boundaries, or every few
//! epochs for ReDo).

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::nn::{
    bias_name, forward, weight_name, Activation, NetworkSpec, NnError, ParameterStore, Tape,
    Tensor, Var, HEADS, INJECT_FROZEN, INJECT_LIVE,
};
use crate::ppo::{Agent, HookEvent, RolloutBuffer, UpdateHooks, DEAD_UNIT_BATCH};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    WarmStart,
    ResetAll,
    ResetFinal,
    ShrinkPerturb,
    SoftShrinkPerturb,
    L2Norm,
    RegenReg,
    LayerNorm,
    Crelu,
    PlasticityInjection,
    Redo,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 11] = [
        InterventionKind::WarmStart,
        InterventionKind::ResetAll,
        InterventionKind::ResetFinal,
        InterventionKind::ShrinkPerturb,
        InterventionKind::SoftShrinkPerturb,
        InterventionKind::L2Norm,
        InterventionKind::RegenReg,
        InterventionKind::LayerNorm,
        InterventionKind::Crelu,
        InterventionKind::PlasticityInjection,
        InterventionKind::Redo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InterventionKind::WarmStart => "warm_start",
            InterventionKind::ResetAll => "reset_all",
            InterventionKind::ResetFinal => "reset_final",
            InterventionKind::ShrinkPerturb => "shrink_perturb",
            InterventionKind::SoftShrinkPerturb => "soft_shrink_perturb",
            InterventionKind::L2Norm => "l2_norm",
            InterventionKind::RegenReg => "regen_reg",
            InterventionKind::LayerNorm => "layer_norm",
            InterventionKind::Crelu => "crelu",
            InterventionKind::PlasticityInjection => "plasticity_injection",
            InterventionKind::Redo => "redo",
        }
    }
}

impl std::str::FromStr for InterventionKind {
    type Err = InterventionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        InterventionKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| InterventionError::Unknown(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum InterventionError {
    #[error("unknown intervention `{0}`")]
    Unknown(String),
    #[error("invalid intervention setting: {0}")]
    Config(String),
}

/// Intervention choice plus every hyperparameter of the catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    pub kind: InterventionKind,
    /// Adds LayerNorm to the network on top of `kind`.
    pub layer_norm: bool,
    /// Weight of the fresh draw for round-boundary shrink+perturb.
    pub shrink_beta: f64,
    /// Weight of the fresh draw for per-step shrink+perturb.
    pub soft_beta: f64,
    pub l2_alpha: f64,
    pub regen_alpha: f64,
    /// Use the squared norm for the L2 and regenerative penalties.
    pub squared_norm: bool,
    /// Epochs between dormant-unit resets.
    pub redo_period: usize,
    pub redo_tau: f64,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            kind: InterventionKind::WarmStart,
            layer_norm: false,
            shrink_beta: 0.5,
            soft_beta: 1e-6,
            l2_alpha: 1e-3,
            regen_alpha: 1e-4,
            squared_norm: true,
            redo_period: 10,
            redo_tau: 0.025,
        }
    }
}

impl InterventionConfig {
    pub fn new(kind: InterventionKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), InterventionError> {
        for (name, b) in [("shrink_beta", self.shrink_beta), ("soft_beta", self.soft_beta)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(InterventionError::Config(format!("{name} must lie in [0, 1], got {b}")));
            }
        }
        for (name, a) in [("l2_alpha", self.l2_alpha), ("regen_alpha", self.regen_alpha)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(InterventionError::Config(format!("{name} must be non-negative, got {a}")));
            }
        }
        if self.redo_period == 0 {
            return Err(InterventionError::Config("redo_period must be positive".into()));
        }
        if !(self.redo_tau >= 0.0) {
            return Err(InterventionError::Config("redo_tau must be non-negative".into()));
        }
        Ok(())
    }

    /// Method label used in archives and tables, e.g. `regen_reg+layer_norm`.
    pub fn label(&self) -> String {
        if self.layer_norm && self.kind != InterventionKind::LayerNorm {
            format!("{}+layer_norm", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }

    /// Parses a method label produced by [`InterventionConfig::label`].
    pub fn from_label(label: &str) -> Result<Self, InterventionError> {
        let mut parts = label.split('+');
        let kind = parts.next().unwrap_or_default().parse()?;
        let mut config = Self::new(kind);
        for extra in parts {
            match extra.parse::<InterventionKind>()? {
                InterventionKind::LayerNorm => config.layer_norm = true,
                other => {
                    return Err(InterventionError::Config(format!(
                        "`{}` cannot be combined with `{}`",
                        other.name(),
                        kind.name()
                    )))
                }
            }
        }
        Ok(config)
    }

    /// The architecture this intervention trains.
    pub fn network_spec(&self, base: &NetworkSpec) -> NetworkSpec {
        let mut spec = base.clone();
        if self.layer_norm || self.kind == InterventionKind::LayerNorm {
            spec.use_layer_norm = true;
        }
        if self.kind == InterventionKind::Crelu {
            spec.activation = Activation::Crelu;
        }
        spec
    }
}

/// `current <- (1 - beta) * current + beta * fresh` for every trainable
/// tensor, with `fresh` newly drawn from the tensor's initialization
/// distribution. Returns the number of values touched.
pub fn shrink_perturb<R: rand::Rng + ?Sized>(
    params: &mut ParameterStore,
    beta: f64,
    rng: &mut R,
) -> usize {
    let keep = 1.0 - beta;
    let mut touched = 0;
    for (_, e) in params.iter_mut().filter(|(_, e)| e.trainable) {
        let fresh = e.sampler.sample(e.current.shape(), rng);
        for (c, f) in e.current.data_mut().iter_mut().zip(fresh.data()) {
            *c = keep * *c + beta * f;
        }
        touched += fresh.len();
    }
    touched
}

/// Records `alpha * ||current - anchor||` over trainable tensors on the tape
/// (squared when `squared`), where the anchor is the initialization snapshot
/// for `toward_init` and zero otherwise.
pub fn norm_penalty<'a>(
    tape: &mut Tape<'a>,
    params: &'a ParameterStore,
    alpha: f64,
    toward_init: bool,
    squared: bool,
) -> Result<Var, NnError> {
    let mut total: Option<Var> = None;
    for (name, e) in params.iter().filter(|(_, e)| e.trainable) {
        let p = tape.param(name, &e.current);
        let d = if toward_init {
            let anchor = tape.constant_ref(&e.init_snapshot);
            tape.sub(p, anchor)?
        } else {
            p
        };
        let sq = tape.square(d);
        let s = tape.sum(sq);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let norm = if squared {
        total
    } else {
        // keeps the derivative finite when the norm is zero
        let tiny = tape.constant(Tensor::scalar(1e-12));
        let t = tape.add(total, tiny)?;
        tape.sqrt(t)
    };
    Ok(tape.scale(norm, alpha))
}

/// Value of `alpha * sum((current - init_snapshot)^2)`.
pub fn regen_loss(params: &ParameterStore, alpha: f64) -> f64 {
    alpha
        * params
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(_, e)| {
                e.current
                    .data()
                    .iter()
                    .zip(e.init_snapshot.data())
                    .map(|(c, i)| (c - i) * (c - i))
                    .sum::<f64>()
            })
            .sum::<f64>()
}

/// Value of `alpha * sum(current^2)`.
pub fn l2_loss(params: &ParameterStore, alpha: f64) -> f64 {
    alpha
        * params
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(_, e)| e.current.sum_sq())
            .sum::<f64>()
}

fn is_head_param(name: &str) -> bool {
    HEADS.iter().any(|h| name.starts_with(&format!("{h}.")))
}

/// Redraws the policy and value heads; encoder tensors are left untouched.
/// Optimizer moments of the redrawn tensors are discarded.
pub fn reset_final<R: rand::Rng + ?Sized>(agent: &mut Agent, rng: &mut R) -> usize {
    let names: Vec<String> = agent
        .params
        .names()
        .filter(|n| is_head_param(n))
        .cloned()
        .collect();
    let mut touched = 0;
    for n in names {
        let e = agent.params.get_mut(&n).expect("name listed above");
        e.current = e.sampler.sample(e.current.shape(), rng);
        touched += e.current.len();
        agent.adam.forget(&n);
    }
    touched
}

/// Replaces every parameter with a fresh draw (exactly what a new network
/// initialized from `rng` would hold) and clears the optimizer.
pub fn reset_all<R: rand::Rng + ?Sized>(agent: &mut Agent, rng: &mut R) -> Result<usize, NnError> {
    agent.params = agent.spec.init_params(rng)?;
    agent.adam.reset();
    Ok(agent.params.num_values())
}

/// Plasticity injection on the given heads: the head becomes
/// `sg(old(x)) + a(x) - sg(b(x))` with `a` and `b` identical fresh draws, so
/// the output is unchanged at injection time and only `a` keeps learning.
/// A head that was already injected first folds `a - b` into `old`.
pub fn plasticity_injection<R: rand::Rng + ?Sized>(
    agent: &mut Agent,
    heads: &[&str],
    rng: &mut R,
) -> Result<usize, NnError> {
    for h in heads {
        if !HEADS.contains(h) {
            return Err(NnError::Usage(format!(
                "plasticity injection applies to the output heads only, not `{h}`"
            )));
        }
    }
    let mut touched = 0;
    for &head in heads {
        let live = format!("{head}.{INJECT_LIVE}");
        let frozen = format!("{head}.{INJECT_FROZEN}");
        for name_of in [weight_name, bias_name] {
            let (old_n, a_n, b_n) = (name_of(head), name_of(&live), name_of(&frozen));
            if let (Some(a), Some(b)) = (agent.params.remove(&a_n), agent.params.remove(&b_n)) {
                let old = agent.params.get_mut(&old_n)?;
                for ((o, av), bv) in old
                    .current
                    .data_mut()
                    .iter_mut()
                    .zip(a.current.data())
                    .zip(b.current.data())
                {
                    *o += av - bv;
                }
            }
            agent.params.get_mut(&old_n)?.trainable = false;
            agent.adam.forget(&old_n);
            agent.adam.forget(&a_n);
            agent.adam.forget(&b_n);
        }
        agent.spec.insert_head(&mut agent.params, &live, rng);
        for name_of in [weight_name, bias_name] {
            let a = agent.params.get(&name_of(&live))?.clone();
            touched += 2 * a.current.len();
            agent
                .params
                .insert(&name_of(&frozen), a.current, a.sampler, false);
        }
    }
    Ok(touched)
}

/// Dormancy score per pre-activation unit of every hidden layer: mean
/// absolute output of the unit over the batch divided by the layer average
/// of that quantity. A CReLU unit's two output halves are pooled.
pub fn dormancy_scores(
    spec: &NetworkSpec,
    params: &ParameterStore,
    batch: &Tensor,
) -> Result<Vec<Vec<f64>>, NnError> {
    let out = forward(spec, params, batch)?;
    let layers = spec.hidden_layers();
    Ok(out
        .trace
        .layers
        .iter()
        .zip(&layers)
        .map(|(t, layer)| {
            let (rows, cols) = (t.rows(), t.cols());
            let mut act = vec![0.0; layer.pre_width];
            for r in 0..rows {
                for (c, v) in t.row(r).iter().enumerate() {
                    act[c % layer.pre_width] += v.abs();
                }
            }
            debug_assert!(cols % layer.pre_width == 0);
            let mean = act.iter().sum::<f64>() / act.len() as f64;
            act.iter()
                .map(|a| if mean > 0.0 { a / mean } else { 0.0 })
                .collect()
        })
        .collect())
}

/// ReDo: units whose dormancy score is at most `tau` get fresh incoming
/// weights and bias and zeroed outgoing weights; their optimizer moments are
/// zeroed. Returns the number of values touched.
pub fn redo<R: rand::Rng + ?Sized>(
    agent: &mut Agent,
    batch: &Tensor,
    tau: f64,
    rng: &mut R,
) -> Result<usize, NnError> {
    let scores = dormancy_scores(&agent.spec, &agent.params, batch)?;
    let layers = agent.spec.hidden_layers();
    let mut touched = 0;
    for (l, (layer, s)) in layers.iter().zip(&scores).enumerate() {
        let dormant: Vec<usize> = (0..s.len()).filter(|&i| s[i] <= tau).collect();
        if dormant.is_empty() {
            continue;
        }
        // incoming weights (column i) and bias i
        let w_name = layer.weight();
        let b_name = layer.bias();
        let mut w_idx = Vec::new();
        let mut b_idx = Vec::new();
        {
            let w = agent.params.get_mut(&w_name)?;
            let sampler = w.sampler;
            let cols = layer.pre_width;
            let data = w.current.data_mut();
            for &i in &dormant {
                for r in 0..layer.fan_in {
                    data[r * cols + i] = sampler.sample_value(rng);
                    w_idx.push(r * cols + i);
                }
            }
        }
        {
            let b = agent.params.get_mut(&b_name)?;
            let sampler = b.sampler;
            for &i in &dormant {
                b.current.data_mut()[i] = sampler.sample_value(rng);
                b_idx.push(i);
            }
        }
        agent.adam.zero_entries(&w_name, &w_idx);
        agent.adam.zero_entries(&b_name, &b_idx);
        touched += w_idx.len() + b_idx.len();

        // outgoing rows: every output unit fed by a dormant unit
        let out_rows: Vec<usize> = dormant
            .iter()
            .flat_map(|&i| (0..layer.out_width / layer.pre_width).map(move |h| i + h * layer.pre_width))
            .collect();
        let consumers: Vec<String> = match layers.get(l + 1) {
            Some(next) => vec![next.weight()],
            None => agent
                .params
                .names()
                .filter(|n| is_head_param(n) && n.ends_with(".weight"))
                .cloned()
                .collect(),
        };
        for name in consumers {
            let e = agent.params.get_mut(&name)?;
            let cols = e.current.cols();
            let mut idx = Vec::with_capacity(out_rows.len() * cols);
            for &r in &out_rows {
                for c in 0..cols {
                    e.current.data_mut()[r * cols + c] = 0.0;
                    idx.push(r * cols + c);
                }
            }
            touched += idx.len();
            agent.adam.zero_entries(&name, &idx);
        }
    }
    Ok(touched)
}

/// Runtime side of an [`InterventionConfig`] for one replicate.
pub struct InterventionHooks {
    config: InterventionConfig,
    rng: rng::Rng,
}

impl InterventionHooks {
    pub fn new(config: InterventionConfig, master_seed: u64, replicate: u64) -> Self {
        Self {
            rng: rng::stream(master_seed, replicate, Stream::Intervention, 0),
            config,
        }
    }

    pub fn config(&self) -> &InterventionConfig {
        &self.config
    }

    /// Applies the intermittent intervention after the last epoch of
    /// `round`, before the next round's shift.
    pub fn on_round_boundary(
        &mut self,
        agent: &mut Agent,
        epoch: usize,
        round: usize,
    ) -> Result<Option<HookEvent>, NnError> {
        let touched = match self.config.kind {
            InterventionKind::ResetAll => reset_all(agent, &mut self.rng)?,
            InterventionKind::ResetFinal => reset_final(agent, &mut self.rng),
            InterventionKind::ShrinkPerturb => {
                shrink_perturb(&mut agent.params, self.config.shrink_beta, &mut self.rng)
            }
            InterventionKind::PlasticityInjection => {
                plasticity_injection(agent, &HEADS, &mut self.rng)?
            }
            _ => return Ok(None),
        };
        Ok(Some(HookEvent {
            epoch,
            round,
            kind: self.config.kind.name().to_string(),
            params_touched: touched,
            firings: 1,
        }))
    }
}

impl UpdateHooks for InterventionHooks {
    fn penalty<'a>(
        &self,
        tape: &mut Tape<'a>,
        params: &'a ParameterStore,
    ) -> Result<Option<Var>, NnError> {
        let c = &self.config;
        match c.kind {
            InterventionKind::L2Norm => norm_penalty(tape, params, c.l2_alpha, false, c.squared_norm).map(Some),
            InterventionKind::RegenReg => {
                norm_penalty(tape, params, c.regen_alpha, true, c.squared_norm).map(Some)
            }
            _ => Ok(None),
        }
    }

    fn after_step(&mut self, agent: &mut Agent) -> Result<Option<usize>, NnError> {
        if self.config.kind != InterventionKind::SoftShrinkPerturb {
            return Ok(None);
        }
        Ok(Some(shrink_perturb(
            &mut agent.params,
            self.config.soft_beta,
            &mut self.rng,
        )))
    }

    fn step_hook_name(&self) -> &str {
        self.config.kind.name()
    }

    fn after_epoch(
        &mut self,
        epoch: usize,
        agent: &mut Agent,
        buffer: &RolloutBuffer,
    ) -> Result<Option<(String, usize)>, NnError> {
        if self.config.kind != InterventionKind::Redo
            || epoch % self.config.redo_period != 0
            || buffer.is_empty()
        {
            return Ok(None);
        }
        let take = DEAD_UNIT_BATCH.min(buffer.len());
        let rows = index::sample(&mut self.rng, buffer.len(), take).into_vec();
        let batch = buffer.gather_obs(&rows);
        let touched = redo(agent, &batch, self.config.redo_tau, &mut self.rng)?;
        Ok(Some((InterventionKind::Redo.name().to_string(), touched)))
    }
}
