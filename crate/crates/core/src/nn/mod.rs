//! Dense tensors, reverse-mode differentiation, the dual-head MLP and Adam.

mod adam;
mod network;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState, Moments};
pub use network::{
    bias_name, forward, layer_norm, weight_name, Activation, ActivationTrace, ForwardOutput,
    HiddenLayer, NetVars, NetworkSpec, HEADS, INJECT_FROZEN, INJECT_LIVE, LAYER_NORM_EPS,
    POLICY_HEAD, VALUE_HEAD,
};
pub use params::{InitSampler, ParamEntry, ParameterStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("no parameter named `{0}`")]
    MissingParameter(String),
    #[error("no gradient supplied for parameter `{0}`")]
    MissingGradient(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}
