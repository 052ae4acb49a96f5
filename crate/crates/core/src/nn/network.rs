//! Dual-head MLP: a shared encoder of dense hidden layers feeding a policy
//! head (action logits) and a value head (scalar).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{InitSampler, NnError, ParameterStore, Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// `concat(relu(x), relu(-x))`; the preceding linear layer is half as wide
    /// so each hidden layer keeps its output width.
    Crelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub use_layer_norm: bool,
    pub n_actions: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_dim: crate::env::OBS_LEN,
            hidden_dims: vec![256, 256],
            activation: Activation::Relu,
            use_layer_norm: false,
            n_actions: crate::env::N_ACTIONS,
        }
    }
}

/// Static description of one hidden layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HiddenLayer {
    pub name: String,
    pub fan_in: usize,
    /// Width of the linear map (and of LayerNorm when enabled).
    pub pre_width: usize,
    /// Width after the activation.
    pub out_width: usize,
}

impl HiddenLayer {
    pub fn weight(&self) -> String {
        format!("{}.weight", self.name)
    }
    pub fn bias(&self) -> String {
        format!("{}.bias", self.name)
    }
    pub fn ln_gain(&self) -> String {
        format!("{}.ln_gain", self.name)
    }
    pub fn ln_bias(&self) -> String {
        format!("{}.ln_bias", self.name)
    }
}

pub const POLICY_HEAD: &str = "policy";
pub const VALUE_HEAD: &str = "value";
pub const HEADS: [&str; 2] = [POLICY_HEAD, VALUE_HEAD];

/// Sub-layer names used once plasticity injection has been applied to a head.
pub const INJECT_LIVE: &str = "inject_a";
pub const INJECT_FROZEN: &str = "inject_b";

pub fn weight_name(prefix: &str) -> String {
    format!("{prefix}.weight")
}

pub fn bias_name(prefix: &str) -> String {
    format!("{prefix}.bias")
}

/// Post-activation values of every hidden layer, `[batch, out_width]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub layers: Vec<Tensor>,
}

/// Tape handles produced by [`NetworkSpec::build`].
#[derive(Clone, Debug)]
pub struct NetVars {
    pub logits: Var,
    pub values: Var,
    pub hidden: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub values: Tensor,
    pub trace: ActivationTrace,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.n_actions == 0 || self.hidden_dims.is_empty() {
            return Err(NnError::Config(
                "network needs input_dim, n_actions and at least one hidden layer".into(),
            ));
        }
        for &h in &self.hidden_dims {
            if h == 0 || (self.activation == Activation::Crelu && h % 2 != 0) {
                return Err(NnError::Config(format!(
                    "hidden width {h} invalid for {:?}",
                    self.activation
                )));
            }
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> Vec<HiddenLayer> {
        let mut fan_in = self.input_dim;
        self.hidden_dims
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let pre_width = match self.activation {
                    Activation::Relu => h,
                    Activation::Crelu => h / 2,
                };
                let layer = HiddenLayer {
                    name: format!("hidden{i}"),
                    fan_in,
                    pre_width,
                    out_width: h,
                };
                fan_in = h;
                layer
            })
            .collect()
    }

    pub fn encoder_width(&self) -> usize {
        *self.hidden_dims.last().unwrap_or(&self.input_dim)
    }

    pub fn head_width(&self, head: &str) -> usize {
        if head == VALUE_HEAD {
            1
        } else {
            self.n_actions
        }
    }

    /// Fresh parameter store drawn from the initialization distributions.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterStore, NnError> {
        self.validate()?;
        let mut p = ParameterStore::new();
        for layer in self.hidden_layers() {
            p.insert_sampled(
                &layer.weight(),
                &[layer.fan_in, layer.pre_width],
                InitSampler::HeUniform {
                    fan_in: layer.fan_in,
                    scale: 1.0,
                },
                rng,
            );
            p.insert_sampled(
                &layer.bias(),
                &[layer.pre_width],
                InitSampler::FanInUniform {
                    fan_in: layer.fan_in,
                    scale: 1.0,
                },
                rng,
            );
            if self.use_layer_norm {
                p.insert_sampled(
                    &layer.ln_gain(),
                    &[layer.pre_width],
                    InitSampler::Constant { value: 1.0 },
                    rng,
                );
                p.insert_sampled(
                    &layer.ln_bias(),
                    &[layer.pre_width],
                    InitSampler::Constant { value: 0.0 },
                    rng,
                );
            }
        }
        for head in HEADS {
            self.insert_head(&mut p, head, rng);
        }
        Ok(p)
    }

    /// Draw a linear head layer under `prefix` (e.g. `policy` or
    /// `policy.inject_a`).
    pub(crate) fn insert_head<R: Rng + ?Sized>(
        &self,
        p: &mut ParameterStore,
        prefix: &str,
        rng: &mut R,
    ) {
        let head = prefix.split('.').next().unwrap_or(prefix);
        let fan_in = self.encoder_width();
        let sampler = InitSampler::FanInUniform { fan_in, scale: 1.0 };
        p.insert_sampled(
            &weight_name(prefix),
            &[fan_in, self.head_width(head)],
            sampler,
            rng,
        );
        p.insert_sampled(&bias_name(prefix), &[self.head_width(head)], sampler, rng);
    }

    /// Record the forward pass of `obs` (`[B, input_dim]`) on `tape`.
    pub fn build<'a>(
        &self,
        tape: &mut Tape<'a>,
        params: &'a ParameterStore,
        obs: Var,
    ) -> Result<NetVars, NnError> {
        let s = tape.value(obs).shape();
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(NnError::Shape(format!(
                "observation batch {s:?}, network expects [B, {}]",
                self.input_dim
            )));
        }
        let mut h = obs;
        let mut hidden = Vec::with_capacity(self.hidden_dims.len());
        for layer in self.hidden_layers() {
            let w = tape.param(&layer.weight(), params.tensor(&layer.weight())?);
            let b = tape.param(&layer.bias(), params.tensor(&layer.bias())?);
            let z = tape.matmul(h, w)?;
            let mut z = tape.add_row(z, b)?;
            if self.use_layer_norm {
                let g = tape.param(&layer.ln_gain(), params.tensor(&layer.ln_gain())?);
                let lb = tape.param(&layer.ln_bias(), params.tensor(&layer.ln_bias())?);
                z = tape.layer_norm(z, g, lb, LAYER_NORM_EPS)?;
            }
            h = match self.activation {
                Activation::Relu => tape.relu(z),
                Activation::Crelu => tape.crelu(z)?,
            };
            hidden.push(h);
        }
        let logits = head(tape, params, POLICY_HEAD, h)?;
        let values = head(tape, params, VALUE_HEAD, h)?;
        Ok(NetVars {
            logits,
            values,
            hidden,
        })
    }
}

fn linear<'a>(
    tape: &mut Tape<'a>,
    params: &'a ParameterStore,
    prefix: &str,
    x: Var,
) -> Result<Var, NnError> {
    let wn = weight_name(prefix);
    let bn = bias_name(prefix);
    let w = tape.param(&wn, params.tensor(&wn)?);
    let b = tape.param(&bn, params.tensor(&bn)?);
    let z = tape.matmul(x, w)?;
    tape.add_row(z, b)
}

/// A head is a plain linear layer until plasticity injection adds the
/// `inject_a` / `inject_b` pair, after which it computes
/// `sg(old(x)) + (a(x) - sg(b(x)))`.
fn head<'a>(
    tape: &mut Tape<'a>,
    params: &'a ParameterStore,
    prefix: &str,
    x: Var,
) -> Result<Var, NnError> {
    let old = linear(tape, params, prefix, x)?;
    let live = format!("{prefix}.{INJECT_LIVE}");
    if !params.contains(&weight_name(&live)) {
        return Ok(old);
    }
    let frozen = format!("{prefix}.{INJECT_FROZEN}");
    let old = tape.stop_gradient(old);
    let a = linear(tape, params, &live, x)?;
    let b = linear(tape, params, &frozen, x)?;
    let b = tape.stop_gradient(b);
    let correction = tape.sub(a, b)?;
    tape.add(old, correction)
}

/// Inference-only forward pass.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParameterStore,
    obs: &Tensor,
) -> Result<ForwardOutput, NnError> {
    let mut tape = Tape::new();
    let x = tape.constant_ref(obs);
    let vars = spec.build(&mut tape, params, x)?;
    Ok(ForwardOutput {
        logits: tape.value(vars.logits).clone(),
        values: tape.value(vars.values).clone(),
        trace: ActivationTrace {
            layers: vars.hidden.iter().map(|&v| tape.value(v).clone()).collect(),
        },
    })
}

/// Row-wise layer normalization outside of a tape.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let mut tape = Tape::new();
    let xv = tape.constant_ref(x);
    let g = tape.constant_ref(gain);
    let b = tape.constant_ref(bias);
    let y = tape.layer_norm(xv, g, b, LAYER_NORM_EPS)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(activation: Activation, ln: bool) -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            hidden_dims: vec![4, 4],
            activation,
            use_layer_norm: ln,
            n_actions: 4,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = tiny(Activation::Relu, false);
        let mut p = spec.init_params(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (_, e) in p.iter_mut() {
            e.current = Tensor::zeros(e.current.shape());
        }
        let obs = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.1, 9.0]).unwrap();
        let out = forward(&spec, &p, &obs).unwrap();
        assert_eq!(out.logits.shape(), &[2, 4]);
        assert_eq!(out.values.shape(), &[2, 1]);
        assert!(out.logits.data().iter().all(|&v| v == 0.0));
        assert!(out.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_observation_width_is_shape_error() {
        let spec = tiny(Activation::Relu, false);
        let p = spec.init_params(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let obs = Tensor::zeros(&[2, 5]);
        assert!(matches!(forward(&spec, &p, &obs), Err(NnError::Shape(_))));
    }

    #[test]
    fn crelu_halves_linear_width() {
        let relu = tiny(Activation::Relu, false)
            .init_params(&mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let crelu = tiny(Activation::Crelu, false)
            .init_params(&mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        for name in ["hidden0.weight", "hidden1.weight"] {
            let r = relu.tensor(name).unwrap();
            let c = crelu.tensor(name).unwrap();
            assert_eq!(r.shape()[0], c.shape()[0]);
            assert_eq!(c.shape()[1] * 2, r.shape()[1]);
            assert_eq!(c.len() * 2, r.len());
        }
        // heads see the same encoder width
        assert_eq!(
            relu.tensor("policy.weight").unwrap().shape(),
            crelu.tensor("policy.weight").unwrap().shape()
        );
    }

    #[test]
    fn crelu_trace_single_unit() {
        // one hidden unit with pre-activation x per sample; samples 1 and -2
        let spec = NetworkSpec {
            input_dim: 1,
            hidden_dims: vec![2],
            activation: Activation::Crelu,
            use_layer_norm: false,
            n_actions: 1,
        };
        let mut p = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p.get_mut("hidden0.weight").unwrap().current = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        p.get_mut("hidden0.bias").unwrap().current = Tensor::new(vec![1], vec![0.0]).unwrap();
        let obs = Tensor::new(vec![2, 1], vec![1.0, -2.0]).unwrap();
        let out = forward(&spec, &p, &obs).unwrap();
        assert_eq!(out.trace.layers[0].data(), &[1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn hand_computed_forward() {
        // 2 inputs -> 3 hidden (ReLU) -> 2 logits + 1 value
        let spec = NetworkSpec {
            input_dim: 2,
            hidden_dims: vec![3],
            activation: Activation::Relu,
            use_layer_norm: false,
            n_actions: 2,
        };
        let mut p = spec.init_params(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let set = |p: &mut ParameterStore, n: &str, s: Vec<usize>, v: Vec<f64>| {
            p.get_mut(n).unwrap().current = Tensor::new(s, v).unwrap();
        };
        set(&mut p, "hidden0.weight", vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.5]);
        set(&mut p, "hidden0.bias", vec![3], vec![0.1, 0.2, -0.3]);
        set(&mut p, "policy.weight", vec![3, 2], vec![1.0, -1.0, 0.5, 0.5, -2.0, 1.0]);
        set(&mut p, "policy.bias", vec![2], vec![0.0, 0.1]);
        set(&mut p, "value.weight", vec![3, 1], vec![0.3, -0.7, 1.1]);
        set(&mut p, "value.bias", vec![1], vec![0.05]);
        let x = [1.0, 2.0];
        // step-by-step evaluation
        let w = [[0.5, -1.0, 2.0], [1.5, 0.25, -0.5]];
        let b = [0.1, 0.2, -0.3];
        let mut h = [0.0; 3];
        for j in 0..3 {
            let z: f64 = x[0] * w[0][j] + x[1] * w[1][j] + b[j];
            h[j] = if z > 0.0 { z } else { 0.0 };
        }
        assert!((h[0] - 3.6).abs() < 1e-12 && h[1] == 0.0 && (h[2] - 0.7).abs() < 1e-12);
        let pw = [[1.0, -1.0], [0.5, 0.5], [-2.0, 1.0]];
        let l0 = h[0] * pw[0][0] + h[1] * pw[1][0] + h[2] * pw[2][0];
        let l1 = h[0] * pw[0][1] + h[1] * pw[1][1] + h[2] * pw[2][1] + 0.1;
        let v = h[0] * 0.3 + h[1] * -0.7 + h[2] * 1.1 + 0.05;
        let out = forward(&spec, &p, &Tensor::new(vec![1, 2], x.to_vec()).unwrap()).unwrap();
        assert!((out.logits.data()[0] - l0).abs() < 1e-12);
        assert!((out.logits.data()[1] - l1).abs() < 1e-12);
        assert!((out.values.item() - v).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_cases() {
        let one = Tensor::full(&[3], 1.0);
        let zero = Tensor::zeros(&[3]);
        let x = Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(layer_norm(&x, &one, &zero).unwrap().data(), &[0.0, 0.0, 0.0]);

        let x = Tensor::new(vec![1, 2], vec![-1.0, 1.0]).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2])).unwrap();
        // variance 1, so the only deviation is the eps in the denominator
        let s = 1.0 / (1.0f64 + LAYER_NORM_EPS).sqrt();
        assert!((y.data()[0] + s).abs() < 1e-15 && (y.data()[1] - s).abs() < 1e-15);
        assert!((y.data()[1] - 1.0).abs() < 1e-5);

        let x = Tensor::new(vec![2, 3], vec![0.3, -4.0, 2.0, 7.0, 7.5, 1.0]).unwrap();
        let bias = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = layer_norm(&x, &Tensor::zeros(&[3]), &bias).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);

        let empty = Tensor::zeros(&[2, 0]);
        assert!(layer_norm(&empty, &Tensor::zeros(&[0]), &Tensor::zeros(&[0])).is_err());
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = Tensor::new(vec![4, 10], data).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[10], 1.0), &Tensor::zeros(&[10])).unwrap();
        for r in 0..4 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 10.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
