use std::fmt;

use serde::{Deserialize, Serialize};

use super::ScenarioError;

/// Size of each factored action head: verb, x-quadrant, y-quadrant.
pub const HEAD_SIZES: [usize; 3] = [2, 3, 3];
/// Offset of each head inside the 8-element logit vector.
pub const HEAD_OFFSETS: [usize; 3] = [0, 2, 5];
pub const NUM_LOGITS: usize = 8;
/// Number of distinct (verb, x, y) triples.
pub const NUM_FACTORED_ACTIONS: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verb {
    NoOp = 0,
    Attack = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum XQuadrant {
    Left = 0,
    Center = 1,
    Right = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum YQuadrant {
    Top = 0,
    Center = 1,
    Bottom = 2,
}

impl XQuadrant {
    pub const ALL: [XQuadrant; 3] = [XQuadrant::Left, XQuadrant::Center, XQuadrant::Right];

    pub fn name(self) -> &'static str {
        match self {
            XQuadrant::Left => "LEFT",
            XQuadrant::Center => "CENTER",
            XQuadrant::Right => "RIGHT",
        }
    }
}

impl YQuadrant {
    pub const ALL: [YQuadrant; 3] = [YQuadrant::Top, YQuadrant::Center, YQuadrant::Bottom];

    pub fn name(self) -> &'static str {
        match self {
            YQuadrant::Top => "TOP",
            YQuadrant::Center => "CENTER",
            YQuadrant::Bottom => "BOTTOM",
        }
    }
}

/// A (verb, x-quadrant, y-quadrant) command for one control group.
/// NO_OP keeps its quadrant fields for logging only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactoredAction {
    pub verb: Verb,
    pub x: XQuadrant,
    pub y: YQuadrant,
}

impl FactoredAction {
    pub const NO_OP: FactoredAction = FactoredAction {
        verb: Verb::NoOp,
        x: XQuadrant::Left,
        y: YQuadrant::Top,
    };

    pub fn attack(x: XQuadrant, y: YQuadrant) -> Self {
        Self {
            verb: Verb::Attack,
            x,
            y,
        }
    }

    pub fn from_indices(verb: usize, x: usize, y: usize) -> Result<Self, ScenarioError> {
        let verb = match verb {
            0 => Verb::NoOp,
            1 => Verb::Attack,
            _ => return Err(ScenarioError::MalformedAction(format!("verb index {verb}"))),
        };
        let x = *XQuadrant::ALL
            .get(x)
            .ok_or_else(|| ScenarioError::MalformedAction(format!("x index {x}")))?;
        let y = *YQuadrant::ALL
            .get(y)
            .ok_or_else(|| ScenarioError::MalformedAction(format!("y index {y}")))?;
        Ok(Self { verb, x, y })
    }

    pub fn indices(self) -> [usize; 3] {
        [self.verb as usize, self.x as usize, self.y as usize]
    }

    /// Flat index in `0..18`: verb * 9 + x * 3 + y.
    pub fn flat_index(self) -> usize {
        let [v, x, y] = self.indices();
        v * 9 + x * 3 + y
    }

    pub fn from_flat_index(i: usize) -> Result<Self, ScenarioError> {
        if i >= NUM_FACTORED_ACTIONS {
            return Err(ScenarioError::MalformedAction(format!("flat index {i}")));
        }
        Self::from_indices(i / 9, (i / 3) % 3, i % 3)
    }

    pub fn is_attack(self) -> bool {
        self.verb == Verb::Attack
    }
}

impl fmt::Display for FactoredAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.verb {
            Verb::NoOp => write!(f, "NO_OP"),
            Verb::Attack => write!(f, "ATTACK({},{})", self.x.name(), self.y.name()),
        }
    }
}

/// Quadrant index (0..3) of a coordinate on a map of side `size`.
pub fn quadrant_of(coord: usize, size: usize) -> usize {
    (coord * 3 / size).min(2)
}

/// Center coordinate of quadrant `q` on a map of side `size`.
pub fn quadrant_center(q: usize, size: usize) -> usize {
    ((2 * q + 1) * size) / 6
}
