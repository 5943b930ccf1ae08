//! Python bindings: scenarios, policies, the FGSM attacker, PPO/A3C training
//! and the evaluation sweeps. Tensors cross the boundary as flat lists of
//! floats with a separate shape.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use c2lab::attack::{self, AttackConfig, AttackTargets, AttackVariant};
use c2lab::autodiff::Tensor;
use c2lab::config::ExperimentConfig;
use c2lab::evaluation::{self, Controller, ObsSource, ProbeConfig, RolloutMode};
use c2lab::policy::{self, checkpoint, ArchConfig, PolicyParams};
use c2lab::scenario::{self, FactoredAction, GroupId, ScenarioConfig, ScenarioKind};
use c2lab::trainer::{self, Algo, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn scenario_config(name: &str, map_size: Option<usize>, t_max: Option<u32>, units_per_group: Option<usize>) -> PyResult<ScenarioConfig> {
    let mut cfg = match name {
        "tigerclaw_mini" | "tigerclaw-mini" => ScenarioConfig::tigerclaw_mini(),
        "ntc" => ScenarioConfig::ntc(),
        other => ScenarioConfig::new(other.parse::<ScenarioKind>().map_err(value_err)?),
    };
    if let Some(m) = map_size {
        cfg.map_size = m;
    }
    if let Some(t) = t_max {
        cfg.t_max = t;
    }
    if let Some(u) = units_per_group {
        cfg.units_per_group = u;
    }
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Observation of one Blue control group.
#[pyclass(name = "Observation", from_py_object)]
#[derive(Clone)]
pub struct PyObservation {
    inner: scenario::Observation,
}

#[pymethods]
impl PyObservation {
    #[getter]
    fn screen(&self) -> Vec<f64> {
        self.inner.screen.data().to_vec()
    }

    #[getter]
    fn screen_shape(&self) -> Vec<usize> {
        self.inner.screen.shape().to_vec()
    }

    #[getter]
    fn nonspatial(&self) -> Vec<f64> {
        self.inner.nonspatial.clone()
    }

    #[getter]
    fn action_mask(&self) -> Vec<bool> {
        self.inner.action_mask.to_vec()
    }

    #[getter]
    fn control_group(&self) -> Vec<f64> {
        self.inner.control_group.to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Observation(group={}, screen={:?}, nonspatial={})",
            self.inner.group_index(),
            self.inner.screen.shape(),
            self.inner.nonspatial.len()
        )
    }
}

/// A wargame scenario instance (Blue is driven from Python, Red is scripted).
#[pyclass(name = "Scenario", unsendable)]
pub struct PyScenario {
    inner: scenario::Scenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (name="tigerclaw_mini", map_size=None, t_max=None, units_per_group=None))]
    fn new(name: &str, map_size: Option<usize>, t_max: Option<u32>, units_per_group: Option<usize>) -> PyResult<Self> {
        let cfg = scenario_config(name, map_size, t_max, units_per_group)?;
        Ok(Self {
            inner: scenario::Scenario::new(cfg).map_err(value_err)?,
        })
    }

    fn reset(&mut self, seed: u64) {
        self.inner.reset(seed);
    }

    /// Observations of the living Blue groups as (group index, observation).
    fn observations(&self) -> Vec<(usize, PyObservation)> {
        self.inner
            .blue_observations()
            .into_iter()
            .map(|(g, o)| (g.index, PyObservation { inner: o }))
            .collect()
    }

    /// Applies one flat action index (0..18) per living Blue group; returns
    /// (reward, done).
    fn step(&mut self, actions: BTreeMap<usize, usize>) -> PyResult<(f64, bool)> {
        let map = actions
            .into_iter()
            .map(|(g, a)| Ok((GroupId::blue(g), FactoredAction::from_flat_index(a).map_err(value_err)?)))
            .collect::<PyResult<BTreeMap<_, _>>>()?;
        let (_, out) = self.inner.step(&map).map_err(value_err)?;
        Ok((out.reward, out.done))
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    #[getter]
    fn timestep(&self) -> u32 {
        self.inner.timestep()
    }

    #[getter]
    fn cumulative_reward(&self) -> i64 {
        self.inner.cumulative_reward()
    }

    /// Remaining-health percentage of all initial units, per side.
    fn health(&self) -> (f64, f64) {
        (
            self.inner.health(scenario::Side::Blue).total_pct,
            self.inner.health(scenario::Side::Red).total_pct,
        )
    }
}

/// Actor-critic parameters plus the scenario they were built for.
#[pyclass(name = "Policy", from_py_object)]
#[derive(Clone)]
pub struct PyPolicy {
    params: Arc<PolicyParams>,
    scenario: ScenarioConfig,
}

fn attack_config(epsilon: f64, variant: &str, targets: &str, clamp: bool) -> PyResult<AttackConfig> {
    let cfg = AttackConfig {
        epsilon,
        variant: variant.parse::<AttackVariant>().map_err(value_err)?,
        targets: targets.parse::<AttackTargets>().map_err(value_err)?,
        clamp,
    };
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

#[pymethods]
impl PyPolicy {
    /// Freshly initialized network for a scenario.
    #[new]
    #[pyo3(signature = (seed=0, scenario="tigerclaw_mini", map_size=None, t_max=None, units_per_group=None))]
    fn new(seed: u64, scenario: &str, map_size: Option<usize>, t_max: Option<u32>, units_per_group: Option<usize>) -> PyResult<Self> {
        let sc = scenario_config(scenario, map_size, t_max, units_per_group)?;
        let params = PolicyParams::init(&ArchConfig::for_scenario(&sc), seed).map_err(value_err)?;
        Ok(Self {
            params: Arc::new(params),
            scenario: sc,
        })
    }

    /// Loads a checkpoint; its architecture must fit the scenario.
    #[staticmethod]
    #[pyo3(signature = (path, scenario="tigerclaw_mini", map_size=None, t_max=None, units_per_group=None))]
    fn load(path: PathBuf, scenario: &str, map_size: Option<usize>, t_max: Option<u32>, units_per_group: Option<usize>) -> PyResult<Self> {
        let sc = scenario_config(scenario, map_size, t_max, units_per_group)?;
        let params = checkpoint::load(&path, Some(&ArchConfig::for_scenario(&sc))).map_err(value_err)?;
        Ok(Self {
            params: Arc::new(params),
            scenario: sc,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.params, &path).map_err(runtime_err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    #[getter]
    fn arch_digest(&self) -> String {
        self.params.arch.digest_hex()
    }

    /// (logits, value) for one observation.
    fn forward(&self, obs: &PyObservation) -> PyResult<(Vec<f64>, f64)> {
        let out = policy::forward_policy(&self.params, &obs.inner).map_err(value_err)?;
        Ok((out.logits().to_vec(), out.value))
    }

    /// Masked per-head probabilities (verb, x, y laid out like the logits).
    fn probabilities(&self, obs: &PyObservation) -> PyResult<Vec<f64>> {
        let out = policy::forward_policy(&self.params, &obs.inner).map_err(value_err)?;
        let d = policy::masked_distribution(&out, &obs.inner.action_mask).map_err(value_err)?;
        Ok(d.probs.to_vec())
    }

    /// One FGSM step against this policy.
    #[pyo3(signature = (obs, epsilon, variant="whole_vector", targets="both", clamp=true))]
    fn perturb(&self, obs: &PyObservation, epsilon: f64, variant: &str, targets: &str, clamp: bool) -> PyResult<PyObservation> {
        let cfg = attack_config(epsilon, variant, targets, clamp)?;
        let adv = attack::fgsm_perturb(&self.params, &obs.inner, &cfg).map_err(runtime_err)?;
        Ok(PyObservation { inner: adv })
    }

    /// Attacked inference: (flat action, flip, benign loss, attacked loss).
    #[pyo3(signature = (obs, epsilon, seed=0, variant="whole_vector", targets="both", clamp=true))]
    fn attacked_action(&self, obs: &PyObservation, epsilon: f64, seed: u64, variant: &str, targets: &str, clamp: bool) -> PyResult<(usize, bool, f64, f64)> {
        let cfg = attack_config(epsilon, variant, targets, clamp)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, d) = attack::attacked_inference(&self.params, &obs.inner, &cfg, &mut rng).map_err(runtime_err)?;
        Ok((a.flat_index(), d.flip, d.benign_loss, d.attacked_loss))
    }

    /// Epsilon sweep over `episodes` seeded rollouts; returns the summary as
    /// a JSON string.
    #[pyo3(signature = (epsilons, episodes=100, seed=0, variant="whole_vector", targets="both", clamp=true))]
    fn sweep(&self, py: Python<'_>, epsilons: Vec<f64>, episodes: usize, seed: u64, variant: &str, targets: &str, clamp: bool) -> PyResult<String> {
        let cfg = attack_config(0.0, variant, targets, clamp)?;
        let (params, sc) = (self.params.clone(), self.scenario.clone());
        let res = py
            .detach(move || evaluation::epsilon_sweep(&params, &sc, &cfg, &epsilons, episodes, seed))
            .map_err(runtime_err)?;
        serde_json::to_string(&res).map_err(runtime_err)
    }

    /// Mean benign reward over seeded rollouts.
    #[pyo3(signature = (episodes=100, seed=0))]
    fn mean_reward(&self, py: Python<'_>, episodes: usize, seed: u64) -> PyResult<f64> {
        let (params, sc) = (self.params.clone(), self.scenario.clone());
        let eps = py
            .detach(move || {
                evaluation::run_rollouts(
                    &sc,
                    &Controller::Policy {
                        params: &params,
                        mode: RolloutMode::Benign,
                    },
                    episodes,
                    seed,
                )
            })
            .map_err(runtime_err)?;
        Ok(evaluation::mean(&eps.iter().map(|e| e.cumulative_reward).collect::<Vec<_>>()))
    }

    /// Loss-landscape probe around the observation after `timestep` holding
    /// steps; returns (low-loss mass, mean loss, max l-inf).
    #[pyo3(signature = (epsilon=0.1, n_samples=10000, obs_seed=0, timestep=5, group=0, seed=0))]
    fn probe(&self, py: Python<'_>, epsilon: f64, n_samples: usize, obs_seed: u64, timestep: u32, group: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
        let (params, sc) = (self.params.clone(), self.scenario.clone());
        let r = py
            .detach(move || {
                let obs = evaluation::probe_observation(&sc, &ObsSource { seed: obs_seed, timestep, group })?;
                let taken = evaluation::probe_action(&params, &obs, seed)?;
                let cfg = ProbeConfig {
                    epsilon,
                    n_samples,
                    ..ProbeConfig::default()
                };
                evaluation::loss_landscape_probe(&params, &obs, taken, &cfg, seed)
            })
            .map_err(runtime_err)?;
        Ok((r.low_loss_mass, r.mean_loss, r.max_linf))
    }
}

/// Trains on a scenario; returns (final policy, partial policy, curve as
/// (global step, mean reward) pairs).
#[pyfunction]
#[pyo3(signature = (budget, algo="ppo", seed=0, scenario="tigerclaw_mini", map_size=None, t_max=None, units_per_group=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    budget: u64,
    algo: &str,
    seed: u64,
    scenario: &str,
    map_size: Option<usize>,
    t_max: Option<u32>,
    units_per_group: Option<usize>,
) -> PyResult<(PyPolicy, PyPolicy, Vec<(u64, f64)>)> {
    let sc = scenario_config(scenario, map_size, t_max, units_per_group)?;
    let cfg = TrainConfig {
        algo: algo.parse::<Algo>().map_err(value_err)?,
        budget,
        ..TrainConfig::default()
    };
    let init = PolicyParams::init(&ArchConfig::for_scenario(&sc), seed).map_err(value_err)?;
    let sc2 = sc.clone();
    let out = py
        .detach(move || trainer::train(move || scenario::Scenario::new(sc2.clone()).expect("validated"), init, &cfg, seed))
        .map_err(runtime_err)?;
    let wrap = |p: PolicyParams| PyPolicy {
        params: Arc::new(p),
        scenario: sc.clone(),
    };
    let curve = out.curve.iter().map(|c| (c.global_step, c.mean_reward)).collect();
    Ok((wrap(out.params), wrap(out.partial), curve))
}

/// Indices of the one-hot attack target for raw logits.
#[pyfunction]
#[pyo3(signature = (logits, variant="whole_vector"))]
fn degenerate_target(logits: Vec<f64>, variant: &str) -> PyResult<Vec<usize>> {
    if logits.len() != scenario::NUM_LOGITS {
        return Err(value_err(format!("expected {} logits, got {}", scenario::NUM_LOGITS, logits.len())));
    }
    let v = variant.parse::<AttackVariant>().map_err(value_err)?;
    Ok(attack::degenerate_target(&policy::PolicyOutput::from_logits(&logits, 0.0), v).hot())
}

/// Human-readable caption of a flat action index.
#[pyfunction]
fn describe_action(flat: usize) -> PyResult<String> {
    let a = FactoredAction::from_flat_index(flat).map_err(value_err)?;
    let [v, x, y] = a.indices();
    policy::decode_action(v, x, y).map_err(value_err)
}

/// Validates an experiment config (TOML text) and returns its digest.
#[pyfunction]
fn config_digest(toml_text: &str) -> PyResult<String> {
    Ok(ExperimentConfig::from_toml(toml_text).map_err(value_err)?.digest())
}

/// Builds an observation from raw parts (for custom experiments).
#[pyfunction]
fn make_observation(screen: Vec<f64>, shape: Vec<usize>, nonspatial: Vec<f64>, action_mask: Vec<bool>) -> PyResult<PyObservation> {
    let g = scenario::GROUPS_PER_SIDE;
    if nonspatial.len() < g {
        return Err(value_err("nonspatial must end with the control-group one-hot"));
    }
    let mask: [bool; scenario::NUM_LOGITS] = action_mask
        .try_into()
        .map_err(|_| value_err("action_mask needs 8 entries"))?;
    let mut control_group = [0.0; scenario::GROUPS_PER_SIDE];
    control_group.copy_from_slice(&nonspatial[nonspatial.len() - g..]);
    Ok(PyObservation {
        inner: scenario::Observation {
            screen: Arc::new(Tensor::new(shape, screen).map_err(value_err)?),
            nonspatial,
            action_mask: mask,
            control_group,
        },
    })
}

#[pymodule]
fn pyc2lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyObservation>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(degenerate_target, m)?)?;
    m.add_function(wrap_pyfunction!(describe_action, m)?)?;
    m.add_function(wrap_pyfunction!(config_digest, m)?)?;
    m.add_function(wrap_pyfunction!(make_observation, m)?)?;
    Ok(())
}
