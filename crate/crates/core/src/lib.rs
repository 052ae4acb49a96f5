//! Laboratory for plasticity loss in on-policy reinforcement learning.
//!
//! PPO agents are trained over rounds of distribution shift in a small
//! jewel-collection gridworld. Between and during rounds an intervention
//! (resets, shrink-and-perturb, regularizers, architectural changes, ...)
//! acts on the network; per-epoch diagnostics and statistical analysis
//! relate the agent's internals to its ability to keep learning.

pub mod diagnostics;
pub mod env;
pub mod harness;
pub mod interventions;
pub mod nn;
pub mod ppo;
pub mod rng;
pub mod shift;
pub mod stats;
