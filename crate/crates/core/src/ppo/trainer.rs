use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use crate::diagnostics::{
    dead_unit_fraction, grad_norm, policy_entropy, sample_categorical, snapshot, weight_diff,
    weight_mag, MetricsRecord,
};
use crate::env::{Action, GridworldInstance, OBS_LEN};
use crate::nn::{forward, Gradients, NnError, Tape, Tensor};
use crate::rng::{self, Stream};
use crate::shift::CellPermutation;

use super::{ppo_loss, Agent, HookEvent, Minibatch, PpoConfig, PpoError, RolloutBuffer, UpdateHooks};

/// Observations drawn from the buffer for the dead-unit measurement.
pub const DEAD_UNIT_BATCH: usize = 256;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundOutcome {
    /// One record per completed epoch (buffer fill plus updates).
    pub records: Vec<MetricsRecord>,
    /// Returns of every episode completed during the round, in order.
    pub episode_returns: Vec<f64>,
    pub events: Vec<HookEvent>,
}

struct Slot {
    env: GridworldInstance,
    ret: f64,
}

impl Slot {
    fn start(instances: &[GridworldInstance], rng: &mut rng::Rng) -> Self {
        let mut env = instances[rng.random_range(0..instances.len())].clone();
        env.reset();
        Self { env, ret: 0.0 }
    }
}

/// PPO training loop state that persists across rounds for one replicate:
/// its random streams and the global epoch counter.
pub struct Trainer {
    config: PpoConfig,
    rollout_rng: rng::Rng,
    minibatch_rng: rng::Rng,
    diag_rng: rng::Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: PpoConfig, master_seed: u64, replicate: u64) -> Result<Self, PpoError> {
        config.validate()?;
        Ok(Self {
            config,
            rollout_rng: rng::stream(master_seed, replicate, Stream::Rollout, 0),
            minibatch_rng: rng::stream(master_seed, replicate, Stream::Minibatch, 0),
            diag_rng: rng::stream(master_seed, replicate, Stream::Diagnostics, 0),
            epoch: 0,
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    /// Epochs completed so far across all rounds.
    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    /// Runs `iterations` environment steps per rollout slot on `instances`,
    /// updating whenever the buffer fills. A partially filled buffer at the
    /// end of the round is discarded.
    pub fn train_round<H: UpdateHooks + ?Sized>(
        &mut self,
        agent: &mut Agent,
        instances: &[GridworldInstance],
        perm: &CellPermutation,
        round: usize,
        iterations: usize,
        hooks: &mut H,
    ) -> Result<RoundOutcome, PpoError> {
        self.train_round_observed(agent, instances, perm, round, iterations, hooks, &mut |_, _| Ok(()))
    }

    /// [`Trainer::train_round`] with `observer` called on every epoch's
    /// record before it is stored (and before the epoch hooks run).
    #[allow(clippy::too_many_arguments)]
    pub fn train_round_observed<H: UpdateHooks + ?Sized>(
        &mut self,
        agent: &mut Agent,
        instances: &[GridworldInstance],
        perm: &CellPermutation,
        round: usize,
        iterations: usize,
        hooks: &mut H,
        observer: &mut dyn FnMut(&Agent, &mut MetricsRecord) -> Result<(), PpoError>,
    ) -> Result<RoundOutcome, PpoError> {
        let mut out = RoundOutcome::default();
        if iterations == 0 {
            return Ok(out);
        }
        if instances.is_empty() {
            return Err(PpoError::Config("no environment instances for this round".into()));
        }
        let n = self.config.n_slots;
        let mut buffer = RolloutBuffer::new(self.config.buffer_size, n, OBS_LEN)?;
        let mut slots: Vec<Slot> = (0..n)
            .map(|_| Slot::start(instances, &mut self.rollout_rng))
            .collect();
        let mut obs = vec![0.0; n * OBS_LEN];
        let mut raw = vec![0.0; OBS_LEN];
        let mut epoch_returns = Vec::new();
        let mut entropy_sum = 0.0;
        let mut entropy_count = 0usize;

        for _ in 0..iterations {
            fill_obs(&slots, perm, &mut raw, &mut obs);
            let batch = Tensor::new(vec![n, OBS_LEN], obs.clone())?;
            let f = forward(&agent.spec, &agent.params, &batch)?;
            for (s, slot) in slots.iter_mut().enumerate() {
                let logits = f.logits.row(s);
                entropy_sum += policy_entropy(logits);
                entropy_count += 1;
                let (a, lp) = sample_categorical(logits, &mut self.rollout_rng);
                let action = Action::from_index(a).expect("policy has one logit per action");
                let (r, done) = slot.env.advance(action)?;
                slot.ret += r;
                buffer.push_parts(
                    &obs[s * OBS_LEN..(s + 1) * OBS_LEN],
                    a,
                    lp,
                    r,
                    f.values.data()[s],
                    done,
                )?;
                if done {
                    epoch_returns.push(slot.ret);
                    out.episode_returns.push(slot.ret);
                    *slot = Slot::start(instances, &mut self.rollout_rng);
                }
            }

            if buffer.is_full() {
                fill_obs(&slots, perm, &mut raw, &mut obs);
                let next = Tensor::new(vec![n, OBS_LEN], obs.clone())?;
                let bootstrap = forward(&agent.spec, &agent.params, &next)?.values.into_data();
                buffer.compute_gae(&bootstrap, self.config.gamma, self.config.gae_lambda)?;

                let entropy = entropy_sum / entropy_count as f64;
                let mut record = self.update(agent, &buffer, hooks, round, &mut out.events)?;
                record.entropy = entropy;
                record.episodes = epoch_returns.len();
                record.train_reward = (!epoch_returns.is_empty())
                    .then(|| epoch_returns.iter().sum::<f64>() / epoch_returns.len() as f64);
                observer(agent, &mut record)?;
                out.records.push(record);

                if let Some((kind, touched)) = hooks.after_epoch(self.epoch, agent, &buffer)? {
                    out.events.push(HookEvent {
                        epoch: self.epoch,
                        round,
                        kind,
                        params_touched: touched,
                        firings: 1,
                    });
                }

                buffer.clear();
                epoch_returns.clear();
                entropy_sum = 0.0;
                entropy_count = 0;
            }
        }
        Ok(out)
    }

    /// `update_epochs` passes of shuffled minibatch steps over a full buffer.
    fn update<H: UpdateHooks + ?Sized>(
        &mut self,
        agent: &mut Agent,
        buffer: &RolloutBuffer,
        hooks: &mut H,
        round: usize,
        events: &mut Vec<HookEvent>,
    ) -> Result<MetricsRecord, PpoError> {
        let before = snapshot(&agent.params);
        let advantages = if self.config.normalize_advantages {
            buffer.normalized_advantages()
        } else {
            buffer.advantages().to_vec()
        };
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        let mut norm_sum = 0.0;
        let mut steps = 0usize;
        let mut firings = 0usize;
        let mut touched = 0usize;

        for _ in 0..self.config.update_epochs {
            order.shuffle(&mut self.minibatch_rng);
            for chunk in order.chunks(self.config.minibatch_size) {
                let obs = buffer.gather_obs(chunk);
                let batch = Minibatch {
                    actions: chunk.iter().map(|&i| buffer.actions()[i]).collect(),
                    old_log_probs: chunk.iter().map(|&i| buffer.log_probs()[i]).collect(),
                    advantages: chunk.iter().map(|&i| advantages[i]).collect(),
                    returns: chunk.iter().map(|&i| buffer.returns()[i]).collect(),
                };
                let mut grads = self.gradients(agent, &obs, &batch, hooks)?;
                let norm = grad_norm(&grads);
                if !norm.is_finite() {
                    return Err(PpoError::NonFinite { term: "gradient" });
                }
                if let Some(max) = self.config.max_grad_norm {
                    if norm > max {
                        let s = max / norm;
                        for g in grads.values_mut() {
                            g.data_mut().iter_mut().for_each(|v| *v *= s);
                        }
                    }
                }
                norm_sum += norm;
                steps += 1;
                agent.adam.apply(&mut agent.params, &grads)?;
                if let Some(t) = hooks.after_step(agent)? {
                    firings += 1;
                    touched += t;
                }
            }
        }
        self.epoch += 1;
        if firings > 0 {
            events.push(HookEvent {
                epoch: self.epoch,
                round,
                kind: hooks.step_hook_name().to_string(),
                params_touched: touched,
                firings,
            });
        }

        let take = DEAD_UNIT_BATCH.min(buffer.len());
        let rows = index::sample(&mut self.diag_rng, buffer.len(), take).into_vec();
        let dead = dead_unit_fraction(&agent.spec, &agent.params, &buffer.gather_obs(&rows))?;

        let record = MetricsRecord {
            epoch: self.epoch,
            round,
            train_reward: None,
            episodes: 0,
            test_reward: None,
            entropy: 0.0,
            weight_mag: weight_mag(&agent.params),
            weight_diff: weight_diff(&agent.params, &before),
            grad_norm: norm_sum / steps.max(1) as f64,
            dead_unit_fraction: dead,
        };
        if !record.weight_mag.is_finite() {
            return Err(PpoError::Nn(NnError::NonFinite("parameters".into())));
        }
        Ok(record)
    }

    fn gradients<H: UpdateHooks + ?Sized>(
        &self,
        agent: &Agent,
        obs: &Tensor,
        batch: &Minibatch,
        hooks: &H,
    ) -> Result<Gradients, PpoError> {
        let mut tape = Tape::new();
        let x = tape.constant_ref(obs);
        let net = agent.spec.build(&mut tape, &agent.params, x)?;
        let loss = ppo_loss(&mut tape, &net, batch, &self.config)?;
        let total = match hooks.penalty(&mut tape, &agent.params)? {
            Some(p) => {
                if !tape.value(p).item().is_finite() {
                    return Err(PpoError::NonFinite { term: "penalty" });
                }
                tape.add(loss.total, p)?
            }
            None => loss.total,
        };
        Ok(tape.backward(total)?)
    }
}

fn fill_obs(slots: &[Slot], perm: &CellPermutation, raw: &mut [f64], obs: &mut [f64]) {
    for (s, slot) in slots.iter().enumerate() {
        slot.env.write_observation(raw);
        perm.apply_into(raw, &mut obs[s * OBS_LEN..(s + 1) * OBS_LEN]);
    }
}
