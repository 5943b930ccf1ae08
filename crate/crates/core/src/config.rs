//! Experiment configuration: one TOML document describing the scenario,
//! network, trainer, attack, evaluation and probe settings of a run, plus the
//! content digest stamped on every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attack::AttackConfig;
use crate::evaluation::{ObsSource, ProbeConfig};
use crate::policy::{ArchConfig, ConvLayer};
use crate::scenario::{ScenarioConfig, GROUPS_PER_SIDE};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Layer widths of the actor-critic network. Input sizes come from the
/// scenario block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub conv: Vec<ConvLayer>,
    pub screen_dense: usize,
    pub nonspatial_dense: usize,
    pub trunk: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let a = ArchConfig::for_scenario(&ScenarioConfig::tigerclaw_mini());
        Self {
            conv: a.conv,
            screen_dense: a.screen_dense,
            nonspatial_dense: a.nonspatial_dense,
            trunk: a.trunk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Episodes per budget.
    pub episodes: usize,
    pub epsilons: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            epsilons: vec![0.0, 0.05, 0.08, 0.1, 0.5],
        }
    }
}

fn default_scenario() -> ScenarioConfig {
    ScenarioConfig::tigerclaw_mini()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for training, rollouts and probes.
    #[serde(default)]
    pub seed: u64,
    /// Output root; not part of the digest.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_scenario")]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub trainer: TrainConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    /// The fixed observation the probe perturbs.
    #[serde(default)]
    pub probe_obs: ObsSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: default_out_dir(),
            scenario: default_scenario(),
            network: NetworkConfig::default(),
            trainer: TrainConfig::default(),
            attack: AttackConfig::default(),
            eval: EvalConfig::default(),
            probe: ProbeConfig::default(),
            probe_obs: ObsSource::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn arch(&self) -> ArchConfig {
        let mut a = ArchConfig::for_scenario(&self.scenario);
        a.conv = self.network.conv.clone();
        a.screen_dense = self.network.screen_dense;
        a.nonspatial_dense = self.network.nonspatial_dense;
        a.trunk = self.network.trunk;
        a
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.scenario
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("scenario: {e}")))?;
        self.arch()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("network: {e}")))?;
        self.attack
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("attack: {e}")))?;
        let t = &self.trainer;
        if !(0.0..=1.0).contains(&t.partial_fraction) {
            return invalid("trainer.partial_fraction must be in [0, 1]".into());
        }
        if t.ppo.episodes_per_batch == 0 || t.ppo.epochs == 0 || t.ppo.minibatch_size == 0 {
            return invalid("trainer.ppo batch sizes and epochs must be positive".into());
        }
        if !(t.ppo.lr > 0.0 && t.ppo.lr.is_finite() && t.a3c.lr > 0.0 && t.a3c.lr.is_finite()) {
            return invalid("trainer learning rates must be positive".into());
        }
        if t.a3c.workers == 0 || t.a3c.n_steps == 0 {
            return invalid("trainer.a3c workers and n_steps must be positive".into());
        }
        if self.eval.episodes == 0 {
            return invalid("eval.episodes must be positive".into());
        }
        check_eps_list(&self.eval.epsilons).map_err(ConfigError::Invalid)?;
        let p = &self.probe;
        if !(p.epsilon.is_finite() && p.epsilon >= 0.0) {
            return invalid(format!("probe.epsilon {} must be finite and >= 0", p.epsilon));
        }
        if p.n_samples == 0 || p.bins == 0 {
            return invalid("probe.n_samples and probe.bins must be positive".into());
        }
        if let Some((lo, hi)) = p.range {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return invalid(format!("probe.range ({lo}, {hi}) is not an interval"));
            }
        }
        if self.probe_obs.group >= GROUPS_PER_SIDE {
            return invalid(format!("probe_obs.group must be below {GROUPS_PER_SIDE}"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of everything except `out_dir`.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("out_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

/// Budgets must be finite, non-negative, distinct and include 0.
pub fn check_eps_list(eps: &[f64]) -> Result<(), String> {
    if eps.is_empty() {
        return Err("epsilon list is empty".into());
    }
    for (i, &e) in eps.iter().enumerate() {
        if !(e.is_finite() && e >= 0.0) {
            return Err(format!("epsilon {e} must be finite and >= 0"));
        }
        if eps[..i].contains(&e) {
            return Err(format!("epsilon {e} listed twice"));
        }
    }
    if !eps.contains(&0.0) {
        return Err("epsilon list must include 0 (the benign baseline)".into());
    }
    Ok(())
}
