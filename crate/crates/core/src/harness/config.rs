use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{BaselineMode, ROUND_TAIL_EPISODES};
use crate::env::{EnvConfig, N_ACTIONS, OBS_LEN};
use crate::interventions::{InterventionConfig, InterventionKind};
use crate::nn::NetworkSpec;
use crate::ppo::PpoConfig;
use crate::shift::Protocol;

use super::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: Protocol,
    pub n_rounds: usize,
    /// Environment instances introduced per round.
    pub k: usize,
    /// Held-out test instances.
    pub n_test: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            kind: Protocol::Permute,
            n_rounds: 10,
            k: 100,
            n_test: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Episodes per held-out evaluation.
    pub test_episodes: usize,
    /// Trailing episodes averaged for a round's train reward.
    pub tail_episodes: usize,
    /// Also evaluate on the test set every this many epochs (0: only at the
    /// end of each round).
    pub eval_every: usize,
    /// How metrics are compared to their first recorded value.
    pub baseline: BaselineMode,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            test_episodes: 50,
            tail_episodes: ROUND_TAIL_EPISODES,
            eval_every: 0,
            baseline: BaselineMode::Ratio,
        }
    }
}

/// Everything needed to reproduce an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub master_seed: u64,
    pub n_seeds: usize,
    /// Environment steps per rollout slot in each round.
    pub iterations_per_round: usize,
    /// Worker threads for running seeds (0: all available cores).
    pub threads: usize,
    pub output_dir: PathBuf,
    pub protocol: ProtocolConfig,
    /// Methods to compare; each gets its own archive.
    pub interventions: Vec<InterventionConfig>,
    pub ppo: PpoConfig,
    pub network: NetworkSpec,
    pub env: EnvConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            master_seed: 0,
            n_seeds: 5,
            iterations_per_round: 20_000,
            threads: 0,
            output_dir: PathBuf::from("runs/experiment"),
            protocol: ProtocolConfig::default(),
            interventions: vec![
                InterventionConfig::new(InterventionKind::WarmStart),
                InterventionConfig::new(InterventionKind::ResetAll),
            ],
            ppo: PpoConfig::default(),
            network: NetworkSpec::default(),
            env: EnvConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

/// Named starting points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-scale protocol: 10 rounds, k = 100, 20,000 iterations.
    Full,
    /// CPU-sized protocol: 3 rounds, k = 20, 2,000 iterations.
    Desk,
    /// Seconds-long run for checking the pipeline.
    Smoke,
}

impl std::str::FromStr for Preset {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            "smoke" => Ok(Preset::Smoke),
            other => Err(HarnessError::Config(format!(
                "unknown preset `{other}` (expected full, desk or smoke)"
            ))),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => Self {
                name: "full".into(),
                output_dir: PathBuf::from("runs/full"),
                ..Self::default()
            },
            Preset::Desk => Self::desk(),
            Preset::Smoke => Self::smoke(),
        }
    }

    /// Desk-scale permute comparison of warm start, reset-all, soft
    /// shrink+perturb and regenerative regularization.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            n_seeds: 5,
            iterations_per_round: 2_000,
            output_dir: PathBuf::from("runs/desk"),
            protocol: ProtocolConfig {
                kind: Protocol::Permute,
                n_rounds: 3,
                k: 20,
                n_test: 50,
            },
            interventions: vec![
                InterventionConfig::new(InterventionKind::WarmStart),
                InterventionConfig::new(InterventionKind::ResetAll),
                InterventionConfig::new(InterventionKind::SoftShrinkPerturb),
                InterventionConfig::new(InterventionKind::RegenReg),
            ],
            ..Self::default()
        }
    }

    pub fn smoke() -> Self {
        Self {
            name: "smoke".into(),
            n_seeds: 2,
            iterations_per_round: 200,
            output_dir: PathBuf::from("runs/smoke"),
            protocol: ProtocolConfig {
                kind: Protocol::Permute,
                n_rounds: 2,
                k: 4,
                n_test: 8,
            },
            network: NetworkSpec {
                hidden_dims: vec![32, 32],
                ..NetworkSpec::default()
            },
            diagnostics: DiagnosticsConfig {
                test_episodes: 8,
                ..DiagnosticsConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let c: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if self.n_seeds == 0 {
            return cfg("n_seeds must be at least 1".into());
        }
        if self.protocol.n_rounds == 0 || self.protocol.k == 0 || self.protocol.n_test == 0 {
            return cfg("protocol needs n_rounds, k and n_test of at least 1".into());
        }
        if self.diagnostics.test_episodes == 0 || self.diagnostics.tail_episodes == 0 {
            return cfg("test_episodes and tail_episodes must be at least 1".into());
        }
        if self.interventions.is_empty() {
            return cfg("at least one intervention is required".into());
        }
        if self.master_seed > i64::MAX as u64 {
            return cfg("master_seed must fit in a signed 64-bit integer".into());
        }
        let mut labels = std::collections::BTreeSet::new();
        for i in &self.interventions {
            i.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if !labels.insert(i.label()) {
                return cfg(format!("intervention `{}` listed twice", i.label()));
            }
            i.network_spec(&self.network)
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.network.input_dim != OBS_LEN || self.network.n_actions != N_ACTIONS {
            return cfg(format!(
                "network must map {OBS_LEN} observation values to {N_ACTIONS} actions"
            ));
        }
        self.ppo
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.env
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Same experiment restricted to one method.
    pub fn for_method(&self, method: &InterventionConfig) -> Self {
        Self {
            interventions: vec![method.clone()],
            ..self.clone()
        }
    }

    /// Sets a dotted parameter such as `ppo.learning_rate` or
    /// `interventions.soft_beta` (applied to every listed intervention).
    /// `value` is read as a TOML value, falling back to a plain string.
    pub fn set_param(&mut self, name: &str, value: &str) -> Result<(), HarnessError> {
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut root = toml::Value::try_from(&*self).map_err(|e| HarnessError::Config(e.to_string()))?;
        let path: Vec<&str> = name.split('.').collect();
        set_path(&mut root, &path, &parsed)
            .map_err(|m| HarnessError::Config(format!("cannot set `{name}`: {m}")))?;
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(format!("`{name}` = {value}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn set_path(node: &mut toml::Value, path: &[&str], value: &toml::Value) -> Result<(), String> {
    match node {
        toml::Value::Array(items) => {
            for item in items {
                set_path(item, path, value)?;
            }
            Ok(())
        }
        toml::Value::Table(t) => {
            let (head, rest) = path.split_first().ok_or("path ends at a section")?;
            if rest.is_empty() {
                // allow setting optional keys that serialize as absent
                t.insert(head.to_string(), value.clone());
                return Ok(());
            }
            let child = t.get_mut(*head).ok_or_else(|| format!("no section `{head}`"))?;
            set_path(child, rest, value)
        }
        _ => Err("path continues past a value".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for p in [Preset::Full, Preset::Desk, Preset::Smoke] {
            let c = ExperimentConfig::preset(p);
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(
            ExperimentConfig::from_toml_str("n_sedes = 3"),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn set_nested_and_listed_params() {
        let mut c = ExperimentConfig::desk();
        c.set_param("ppo.learning_rate", "1e-3").unwrap();
        assert_eq!(c.ppo.learning_rate, 1e-3);
        c.set_param("interventions.soft_beta", "1e-5").unwrap();
        assert!(c.interventions.iter().all(|i| i.soft_beta == 1e-5));
        c.set_param("protocol.kind", "window").unwrap();
        assert_eq!(c.protocol.kind, Protocol::Window);
        c.set_param("ppo.max_grad_norm", "0.5").unwrap();
        assert_eq!(c.ppo.max_grad_norm, Some(0.5));
        assert!(c.set_param("ppo.clip_epsilon", "1.5").is_err());
        assert!(c.set_param("nope.x", "1").is_err());
    }
}
