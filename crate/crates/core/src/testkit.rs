//! Random fixtures shared by the property tests and the acceptance suite.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::policy::{ArchConfig, ConvLayer, PolicyParams};
use crate::scenario::{Observation, GROUPS_PER_SIDE, HEAD_OFFSETS, HEAD_SIZES, NUM_LOGITS};

/// A small random architecture (one or two conv layers).
pub fn random_arch<R: Rng + ?Sized>(rng: &mut R) -> ArchConfig {
    let size = rng.random_range(5..=9);
    let mut conv = vec![ConvLayer {
        filters: rng.random_range(1..=3),
        kernel: rng.random_range(2..=3),
        stride: rng.random_range(1..=2),
    }];
    if rng.random_bool(0.5) {
        conv.push(ConvLayer {
            filters: rng.random_range(1..=2),
            kernel: 2,
            stride: 1,
        });
    }
    ArchConfig {
        screen_channels: rng.random_range(1..=3),
        screen_size: size,
        conv,
        screen_dense: rng.random_range(3..=6),
        nonspatial_len: GROUPS_PER_SIDE + rng.random_range(2..=8),
        nonspatial_dense: rng.random_range(3..=6),
        trunk: rng.random_range(4..=8),
    }
}

/// Parameters with every tensor uniform in [-scale, scale] (biases too), so
/// that logits are far from the near-uniform regime of a fresh init.
pub fn random_params<R: Rng + ?Sized>(arch: &ArchConfig, scale: f64, rng: &mut R) -> PolicyParams {
    let mut p = PolicyParams::zeros(arch).expect("valid arch");
    for (_, t) in p.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-scale..=scale);
        }
    }
    p
}

/// An action mask with at least one allowed entry per head.
pub fn random_mask<R: Rng + ?Sized>(rng: &mut R) -> [bool; NUM_LOGITS] {
    let mut m = [false; NUM_LOGITS];
    for h in 0..3 {
        for k in 0..HEAD_SIZES[h] {
            m[HEAD_OFFSETS[h] + k] = rng.random_bool(0.7);
        }
        let forced = HEAD_OFFSETS[h] + rng.random_range(0..HEAD_SIZES[h]);
        m[forced] = true;
    }
    m
}

/// A random in-range observation for `arch`, selecting `group`.
pub fn random_observation<R: Rng + ?Sized>(
    arch: &ArchConfig,
    group: usize,
    rng: &mut R,
) -> Observation {
    let c = arch.screen_channels;
    let s = arch.screen_size;
    let screen: Vec<f64> = (0..c * s * s).map(|_| rng.random_range(0.0..=1.0)).collect();
    let mut nonspatial: Vec<f64> = (0..arch.nonspatial_len - GROUPS_PER_SIDE)
        .map(|_| rng.random_range(0.0..=1.0))
        .collect();
    let mut control_group = [0.0; GROUPS_PER_SIDE];
    control_group[group] = 1.0;
    nonspatial.extend_from_slice(&control_group);
    Observation {
        screen: Arc::new(Tensor::new(vec![c, s, s], screen).expect("shape")),
        nonspatial,
        action_mask: random_mask(rng),
        control_group,
    }
}

/// Rounding slack of one `x + eps` addition for values of magnitude <= 2.
pub const ROUNDING_SLACK: f64 = 4.0 * f64::EPSILON;

/// `|a - b| <= eps`, up to the single rounding of the perturbed value.
pub fn within_budget(a: f64, b: f64, eps: f64) -> bool {
    (a - b).abs() <= eps + ROUNDING_SLACK
}

/// The change `a - b` is 0 or +-eps, up to the single rounding.
pub fn is_sign_step(a: f64, b: f64, eps: f64) -> bool {
    let d = a - b;
    d == 0.0 || ((d.abs() - eps).abs() <= ROUNDING_SLACK)
}
