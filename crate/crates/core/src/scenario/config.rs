use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ScenarioError;

pub const BLUE_ROSTER: [&str; 5] = ["AVIATION", "MECH_INF", "MORTAR", "SCOUT", "TANK"];
pub const RED_ROSTER: [&str; 5] = ["ANTI_ARMOR", "ARTILLERY", "AVIATION", "INFANTRY", "MECH_INF"];
pub const GROUPS_PER_SIDE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Blue attacks westward across a wadi with two crossing points.
    Tigerclaw,
    /// Blue defends a zone against a seek-and-destroy Red force.
    Ntc,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Tigerclaw => "tigerclaw",
            ScenarioKind::Ntc => "ntc",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tigerclaw" => Ok(ScenarioKind::Tigerclaw),
            "ntc" => Ok(ScenarioKind::Ntc),
            _ => Err(ScenarioError::UnknownScenario(s.to_string())),
        }
    }
}

/// Per-group unit statistics. Speed and range are in cells (Chebyshev),
/// damage in hit points per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSpec {
    pub hp_max: u32,
    pub speed: u32,
    pub range: u32,
    pub damage: u32,
}

impl UnitSpec {
    pub const fn new(hp_max: u32, speed: u32, range: u32, damage: u32) -> Self {
        Self {
            hp_max,
            speed,
            range,
            damage,
        }
    }
}

// Calibration constants; roster order matches BLUE_ROSTER / RED_ROSTER.
const DEFAULT_BLUE: [UnitSpec; 5] = [
    UnitSpec::new(60, 3, 6, 6),   // AVIATION
    UnitSpec::new(80, 2, 4, 5),   // MECH_INF
    UnitSpec::new(50, 1, 9, 6),   // MORTAR
    UnitSpec::new(40, 3, 3, 3),   // SCOUT
    UnitSpec::new(120, 2, 4, 15), // TANK
];

const DEFAULT_RED: [UnitSpec; 5] = [
    UnitSpec::new(60, 1, 5, 10), // ANTI_ARMOR
    UnitSpec::new(50, 1, 9, 8),  // ARTILLERY
    UnitSpec::new(60, 3, 6, 6),  // AVIATION
    UnitSpec::new(50, 1, 3, 4),  // INFANTRY
    UnitSpec::new(80, 2, 4, 5),  // MECH_INF
];

fn default_map_size() -> usize {
    64
}
fn default_t_max() -> u32 {
    250
}
fn default_units_per_group() -> usize {
    3
}
fn default_blue() -> [UnitSpec; 5] {
    DEFAULT_BLUE
}
fn default_red() -> [UnitSpec; 5] {
    DEFAULT_RED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: ScenarioKind,
    #[serde(default = "default_map_size")]
    pub map_size: usize,
    #[serde(default = "default_t_max")]
    pub t_max: u32,
    #[serde(default = "default_units_per_group")]
    pub units_per_group: usize,
    #[serde(default)]
    pub randomize_start: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_blue")]
    pub blue_units: [UnitSpec; 5],
    #[serde(default = "default_red")]
    pub red_units: [UnitSpec; 5],
}

impl ScenarioConfig {
    pub fn new(name: ScenarioKind) -> Self {
        Self {
            name,
            map_size: default_map_size(),
            t_max: default_t_max(),
            units_per_group: default_units_per_group(),
            randomize_start: false,
            seed: 0,
            blue_units: DEFAULT_BLUE,
            red_units: DEFAULT_RED,
        }
    }

    pub fn tigerclaw() -> Self {
        Self::new(ScenarioKind::Tigerclaw)
    }

    /// NTC with per-seed randomized starting positions.
    pub fn ntc() -> Self {
        Self {
            randomize_start: true,
            ..Self::new(ScenarioKind::Ntc)
        }
    }

    /// Desk-scale TigerClaw: 64x64 map, three units per group, shortened horizon.
    pub fn tigerclaw_mini() -> Self {
        Self {
            t_max: 80,
            ..Self::tigerclaw()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::InvalidConfig(msg));
        if self.map_size < 12 {
            return invalid(format!("map_size {} is below the minimum of 12", self.map_size));
        }
        if self.t_max == 0 {
            return invalid("t_max must be positive".into());
        }
        if self.units_per_group == 0 || self.units_per_group > 9 {
            return invalid(format!("units_per_group {} not in 1..=9", self.units_per_group));
        }
        for (side, specs, roster) in [
            ("blue", &self.blue_units, &BLUE_ROSTER),
            ("red", &self.red_units, &RED_ROSTER),
        ] {
            for (spec, name) in specs.iter().zip(roster.iter()) {
                if spec.hp_max == 0 || spec.speed == 0 || spec.range == 0 || spec.damage == 0 {
                    return invalid(format!("{side} {name}: unit stats must be positive"));
                }
                if spec.speed as usize > self.map_size || spec.range as usize > self.map_size {
                    return invalid(format!("{side} {name}: speed/range exceed map size"));
                }
            }
        }
        Ok(())
    }

    pub fn units_per_side(&self) -> usize {
        GROUPS_PER_SIDE * self.units_per_group
    }

    /// Length of the nonspatial vector: 4 values per unit slot, a 2-value
    /// score block and the 5-way control-group one-hot.
    pub fn nonspatial_len(&self) -> usize {
        4 * 2 * self.units_per_side() + 2 + GROUPS_PER_SIDE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scenario_name_rejected() {
        assert!(matches!(
            "fort-irwin".parse::<ScenarioKind>(),
            Err(ScenarioError::UnknownScenario(_))
        ));
        assert_eq!("NTC".parse::<ScenarioKind>().unwrap(), ScenarioKind::Ntc);
    }

    #[test]
    fn defaults_validate() {
        ScenarioConfig::tigerclaw().validate().unwrap();
        ScenarioConfig::ntc().validate().unwrap();
        assert_eq!(ScenarioConfig::tigerclaw().nonspatial_len(), 127);
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let cfg: ScenarioConfig = toml::from_str("name = \"ntc\"\nmap_size = 32\n").unwrap();
        assert_eq!(cfg.map_size, 32);
        assert_eq!(cfg.blue_units, DEFAULT_BLUE);
        assert!(toml::from_str::<ScenarioConfig>("name = \"mars\"").is_err());
    }
}
