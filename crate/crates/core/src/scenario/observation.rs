use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{GROUPS_PER_SIDE, NUM_LOGITS};
use crate::autodiff::Tensor;

pub const SCREEN_CHANNELS: usize = 3;

/// Policy input for one control group at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// [C, S, S] planes with values in [0, 1]. Shared between the groups of
    /// one timestep.
    pub screen: Arc<Tensor>,
    /// Unit slots, score block and the trailing control-group one-hot.
    pub nonspatial: Vec<f64>,
    /// Allowed logits, laid out (verb, x, y) like the policy output.
    pub action_mask: [bool; NUM_LOGITS],
    pub control_group: [f64; GROUPS_PER_SIDE],
}

impl Observation {
    /// Index of the selected control group.
    pub fn group_index(&self) -> usize {
        self.control_group.iter().position(|&v| v == 1.0).unwrap_or(0)
    }

    /// Start of the control-group one-hot inside `nonspatial`.
    pub fn one_hot_offset(&self) -> usize {
        self.nonspatial.len() - GROUPS_PER_SIDE
    }

    pub fn in_unit_range(&self) -> bool {
        self.screen.data().iter().all(|v| (0.0..=1.0).contains(v))
            && self.nonspatial.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// One decoded unit slot of a nonspatial vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedSlot {
    pub alive: bool,
    pub hp_fraction: f64,
    pub cell: (usize, usize),
}

/// Inverse of the unit-slot layout: recovers every slot's cell on a map of
/// side `map_size`. `slots` is the number of unit slots (both sides).
pub fn decode_nonspatial(v: &[f64], slots: usize, map_size: usize) -> Vec<DecodedSlot> {
    (0..slots)
        .map(|i| {
            let s = &v[4 * i..4 * i + 4];
            DecodedSlot {
                alive: s[0] == 1.0,
                hp_fraction: s[1],
                cell: (
                    (s[2] * map_size as f64).round() as usize,
                    (s[3] * map_size as f64).round() as usize,
                ),
            }
        })
        .collect()
}
