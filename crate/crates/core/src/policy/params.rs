use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchConfig, PolicyError};
use crate::autodiff::Tensor;

/// Scale applied to the initial action-logit weights so a fresh policy starts
/// close to uniform.
const LOGIT_INIT_SCALE: f64 = 0.01;

/// Named weights of one network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: ArchConfig,
    tensors: BTreeMap<String, Tensor>,
    /// Number of optimizer updates applied.
    pub version: u64,
    /// Environment steps consumed when this version was produced.
    pub step: u64,
}

impl PolicyParams {
    /// Uniform fan-in init: weights in +-1/sqrt(fan_in), biases zero.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self, PolicyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape, fan_in) in arch.param_shapes()? {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".b") {
                vec![0.0; n]
            } else {
                let mut bound = 1.0 / (fan_in as f64).sqrt();
                if name == "logits.w" {
                    bound *= LOGIT_INIT_SCALE;
                }
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self {
            arch: arch.clone(),
            tensors,
            version: 0,
            step: 0,
        })
    }

    pub fn zeros(arch: &ArchConfig) -> Result<Self, PolicyError> {
        let tensors = arch
            .param_shapes()?
            .into_iter()
            .map(|(name, shape, _)| (name, Tensor::zeros(&shape)))
            .collect();
        Ok(Self {
            arch: arch.clone(),
            tensors,
            version: 0,
            step: 0,
        })
    }

    /// Builds params from named tensors, checking names and shapes against `arch`.
    pub fn from_tensors(
        arch: &ArchConfig,
        tensors: BTreeMap<String, Tensor>,
        version: u64,
        step: u64,
    ) -> Result<Self, PolicyError> {
        let expected = arch.param_shapes()?;
        if expected.len() != tensors.len() {
            return Err(PolicyError::ParamMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &expected {
            match tensors.get(name) {
                None => return Err(PolicyError::ParamMismatch(format!("missing `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(PolicyError::ParamMismatch(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(t) if !t.is_finite() => {
                    return Err(PolicyError::NonFinite(name.clone()));
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            arch: arch.clone(),
            tensors,
            version,
            step,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Mutable access to one tensor; its shape cannot change.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// First non-finite tensor, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n.as_str())
    }
}
