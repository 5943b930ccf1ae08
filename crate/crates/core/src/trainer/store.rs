use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::Gradients;
use crate::policy::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: Some(0.5),
        }
    }
}

/// Adam with bias correction, minimizing the loss whose gradient is given.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: u64,
}

pub fn global_norm(grads: &Gradients) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut PolicyParams, grads: &Gradients) -> Result<(), TrainError> {
        check_finite(grads)?;
        let norm = global_norm(grads);
        let scale = match self.cfg.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (name, p) in params.tensors_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; p.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gi = gi * scale;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                *w -= c.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
            }
        }
        if let Some(name) = params.first_non_finite() {
            return Err(TrainError::NonFiniteParams(name.to_string()));
        }
        Ok(())
    }
}

pub fn check_finite(grads: &Gradients) -> Result<(), TrainError> {
    for (name, g) in grads {
        if !g.is_finite() {
            let bad = g.data().iter().filter(|v| !v.is_finite()).count();
            return Err(TrainError::NonFiniteGradient(format!(
                "{bad} non-finite entries in gradient of `{name}`"
            )));
        }
    }
    Ok(())
}

struct StoreInner {
    snapshot: Arc<PolicyParams>,
    adam: Adam,
    updates: u64,
    env_steps: u64,
}

/// Central parameters shared by asynchronous workers. Readers get immutable
/// snapshots; each submitted gradient set is applied atomically and
/// publishes a new snapshot.
pub struct ParameterStore {
    inner: Mutex<StoreInner>,
}

impl ParameterStore {
    pub fn new(params: PolicyParams, adam: AdamConfig) -> Self {
        Self {
            inner: Mutex::new(StoreInner {
                snapshot: Arc::new(params),
                adam: Adam::new(adam),
                updates: 0,
                env_steps: 0,
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, StoreInner> {
        // A worker panicking while holding the lock leaves the data intact
        // (updates publish a fresh Arc only on success).
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn snapshot(&self) -> Arc<PolicyParams> {
        self.lock().snapshot.clone()
    }

    pub fn updates(&self) -> u64 {
        self.lock().updates
    }

    pub fn env_steps(&self) -> u64 {
        self.lock().env_steps
    }

    /// Counts environment steps without an update.
    pub fn add_env_steps(&self, n: u64) -> u64 {
        let mut g = self.lock();
        g.env_steps += n;
        g.env_steps
    }

    /// Applies one gradient set; returns the new parameter version. Gradients
    /// with non-finite entries are rejected and leave the store unchanged.
    pub fn apply(&self, grads: &Gradients) -> Result<u64, TrainError> {
        check_finite(grads)?;
        let mut g = self.lock();
        let mut next = (*g.snapshot).clone();
        let mut adam = g.adam.clone();
        adam.step(&mut next, grads)?;
        g.updates += 1;
        next.version = g.updates;
        next.step = g.env_steps;
        g.adam = adam;
        g.snapshot = Arc::new(next);
        Ok(g.updates)
    }

    pub fn into_params(self) -> PolicyParams {
        let inner = self.inner.into_inner().unwrap_or_else(|e| e.into_inner());
        Arc::try_unwrap(inner.snapshot).unwrap_or_else(|a| (*a).clone())
    }
}
