//! Seeded grid-world micro-wargame.
//!
//! Two scenarios share one engine: `tigerclaw` (Blue attacks west across a
//! wadi with two crossing gaps, Red scripted to hold defensive posts) and
//! `ntc` (Blue defends, Red scripted to seek and destroy). Each side fields
//! five control groups; Blue groups are commanded with [`FactoredAction`]s.
//!
//! Rewards: +10 per Red unit destroyed, -10 per Blue unit destroyed, and in
//! tigerclaw +10 per Blue unit crossing the wadi westward, -10 per retreat.

mod action;
mod config;
mod observation;
mod scripted;
mod terrain;
pub mod trace;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::env::Environment;

pub use action::{
    quadrant_center, quadrant_of, FactoredAction, Verb, XQuadrant, YQuadrant, HEAD_OFFSETS,
    HEAD_SIZES, NUM_FACTORED_ACTIONS, NUM_LOGITS,
};
pub use config::{ScenarioConfig, ScenarioKind, UnitSpec, BLUE_ROSTER, GROUPS_PER_SIDE, RED_ROSTER};
pub use observation::{decode_nonspatial, DecodedSlot, Observation, SCREEN_CHANNELS};
pub use terrain::{chebyshev, Bank, Terrain, Wadi};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}` (expected tigerclaw or ntc)")]
    UnknownScenario(String),
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("action given for dead control group {0}")]
    DeadGroup(String),
    #[error("no action given for living control group {0}")]
    MissingAction(String),
    #[error("episode already finished")]
    EpisodeDone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Blue,
    Red,
}

/// A control group: side plus roster slot (0..5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupId {
    pub side: Side,
    pub index: usize,
}

impl GroupId {
    pub fn blue(index: usize) -> Self {
        Self {
            side: Side::Blue,
            index,
        }
    }

    pub fn red(index: usize) -> Self {
        Self {
            side: Side::Red,
            index,
        }
    }

    pub fn name(self) -> &'static str {
        match self.side {
            Side::Blue => BLUE_ROSTER[self.index],
            Side::Red => RED_ROSTER[self.index],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub group: GroupId,
    pub pos: (usize, usize),
    pub hp: u32,
    pub hp_max: u32,
    bank: Option<Bank>,
}

impl Unit {
    pub fn alive(&self) -> bool {
        self.hp > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingDirection {
    /// East bank to west bank (+10).
    Westward,
    /// West bank back to east bank (-10).
    Eastward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// A unit of `side` belonging to `group` was destroyed.
    Kill { side: Side, group: usize, unit: usize },
    Crossing { unit: usize, direction: CrossingDirection },
}

/// Reward implied by an event list.
pub fn reward_from_events(events: &[Event]) -> i64 {
    events
        .iter()
        .map(|e| match e {
            Event::Kill { side: Side::Red, .. } => 10,
            Event::Kill { side: Side::Blue, .. } => -10,
            Event::Crossing {
                direction: CrossingDirection::Westward,
                ..
            } => 10,
            Event::Crossing {
                direction: CrossingDirection::Eastward,
                ..
            } => -10,
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub events: Vec<Event>,
}

/// Remaining-health summary of one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    /// Per control group, remaining hp as a percentage of initial hp.
    pub group_pct: [f64; 5],
    /// Remaining hp of all initial units as a percentage.
    pub total_pct: f64,
    pub casualties: usize,
    pub initial_units: usize,
}

pub struct Scenario {
    config: ScenarioConfig,
    terrain: Terrain,
    units: Vec<Unit>,
    red_posts: [(usize, usize); 5],
    t: u32,
    cumulative_reward: i64,
    done: bool,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let terrain = Terrain::new(config.name, config.map_size);
        let mut s = Self {
            terrain,
            units: Vec::new(),
            red_posts: [(0, 0); 5],
            t: 0,
            cumulative_reward: 0,
            done: false,
            config,
        };
        s.reset(s.config.seed);
        Ok(s)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn terrain(&self) -> &Terrain {
        &self.terrain
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn timestep(&self) -> u32 {
        self.t
    }

    pub fn cumulative_reward(&self) -> i64 {
        self.cumulative_reward
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn red_posts(&self) -> &[(usize, usize); 5] {
        &self.red_posts
    }

    /// Places both forces per the scenario layout and returns the observation
    /// of the first Blue control group.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.config.map_size;
        let per = self.config.units_per_group;
        let randomize = self.config.randomize_start;
        let (blue_anchors, red_anchors): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
            match self.config.name {
                ScenarioKind::Tigerclaw => {
                    let w = *self.terrain.wadi().unwrap();
                    let back = s - s / 8 - 1;
                    let blue = (0..5).map(|i| (back, (i + 1) * s / 6)).collect();
                    let fwd = w.start.saturating_sub(s / 10);
                    let red = vec![
                        (fwd, s / 4),
                        (s / 8, s / 2),
                        (s / 6, s / 5),
                        (fwd, 3 * s / 4),
                        (s / 6, 4 * s / 5),
                    ];
                    (blue, red)
                }
                ScenarioKind::Ntc => {
                    let cx = 3 * s / 4;
                    let cy = s / 2;
                    let r = s / 8;
                    let blue = vec![
                        (cx, cy - r),
                        (cx - r, cy),
                        (cx + r / 2, cy),
                        (cx, cy + r),
                        (cx - r / 2, cy + r / 2),
                    ];
                    let red = (0..5).map(|i| (s / 16, (2 * i + 1) * s / 10)).collect();
                    (blue, red)
                }
            };

        let jitter = |rng: &mut ChaCha8Rng, anchor: (usize, usize), spread: usize| {
            if !randomize {
                return anchor;
            }
            let j = spread as i64;
            let dx = rng.random_range(-j..=j);
            let dy = rng.random_range(-j..=j);
            (
                (anchor.0 as i64 + dx).clamp(0, s as i64 - 1) as usize,
                (anchor.1 as i64 + dy).clamp(0, s as i64 - 1) as usize,
            )
        };

        self.units.clear();
        let spread = (s / 16).max(1);
        for (side, anchors) in [(Side::Blue, &blue_anchors), (Side::Red, &red_anchors)] {
            for (gi, &anchor) in anchors.iter().enumerate() {
                let anchor = jitter(&mut rng, anchor, spread);
                let spec = match side {
                    Side::Blue => self.config.blue_units[gi],
                    Side::Red => self.config.red_units[gi],
                };
                if side == Side::Red {
                    self.red_posts[gi] = anchor;
                }
                for u in 0..per {
                    let pos = self.place(anchor, u, side);
                    self.units.push(Unit {
                        group: GroupId { side, index: gi },
                        pos,
                        hp: spec.hp_max,
                        hp_max: spec.hp_max,
                        bank: self.terrain.wadi().and_then(|w| w.bank(pos.0)),
                    });
                }
            }
        }
        self.t = 0;
        self.cumulative_reward = 0;
        self.done = false;
        self.observation(GroupId::blue(0))
    }

    /// Cell for unit `u` of a group anchored at `anchor`: a 3-wide block,
    /// kept inside the map and on the side's own bank.
    fn place(&self, anchor: (usize, usize), u: usize, side: Side) -> (usize, usize) {
        let s = self.config.map_size;
        let mut x = (anchor.0 + u % 3).min(s - 1);
        let y = (anchor.1 + u / 3).min(s - 1);
        if let Some(w) = self.terrain.wadi() {
            match side {
                Side::Blue => x = x.max(w.end),
                Side::Red => x = x.min(w.start - 1),
            }
        }
        (x, y)
    }

    pub fn group_alive(&self, g: GroupId) -> bool {
        self.units.iter().any(|u| u.group == g && u.alive())
    }

    pub fn living_groups(&self, side: Side) -> Vec<GroupId> {
        (0..GROUPS_PER_SIDE)
            .map(|i| GroupId { side, index: i })
            .filter(|g| self.group_alive(*g))
            .collect()
    }

    pub fn side_eliminated(&self, side: Side) -> bool {
        !self.units.iter().any(|u| u.group.side == side && u.alive())
    }

    /// Quadrant-center target cell of an ATTACK action.
    pub fn target_cell(&self, a: FactoredAction) -> (usize, usize) {
        let s = self.config.map_size;
        (quadrant_center(a.x as usize, s), quadrant_center(a.y as usize, s))
    }

    /// Advances one timestep. `actions` must hold exactly one action per
    /// living Blue control group; Red actions come from the scripted policy.
    pub fn step(
        &mut self,
        actions: &BTreeMap<GroupId, FactoredAction>,
    ) -> Result<(Observation, StepOutcome), ScenarioError> {
        if self.done {
            return Err(ScenarioError::EpisodeDone);
        }
        for g in actions.keys() {
            if g.side != Side::Blue || g.index >= GROUPS_PER_SIDE {
                return Err(ScenarioError::MalformedAction(format!(
                    "{g:?} is not a Blue control group"
                )));
            }
            if !self.group_alive(*g) {
                return Err(ScenarioError::DeadGroup(g.name().to_string()));
            }
        }
        for g in self.living_groups(Side::Blue) {
            if !actions.contains_key(&g) {
                return Err(ScenarioError::MissingAction(g.name().to_string()));
            }
        }
        let red_actions = self.scripted_red();
        let mut events = Vec::new();

        // Movement.
        for i in 0..self.units.len() {
            if !self.units[i].alive() {
                continue;
            }
            let g = self.units[i].group;
            let action = match g.side {
                Side::Blue => actions[&g],
                Side::Red => red_actions[&g],
            };
            if !action.is_attack() {
                continue;
            }
            let speed = self.spec(g).speed;
            let target = self.target_cell(action);
            let pos = self.terrain.advance(self.units[i].pos, target, speed);
            self.units[i].pos = pos;
            if g.side == Side::Blue {
                if let Some(bank) = self.terrain.wadi().and_then(|w| w.bank(pos.0)) {
                    if Some(bank) != self.units[i].bank {
                        let direction = match bank {
                            Bank::West => CrossingDirection::Westward,
                            Bank::East => CrossingDirection::Eastward,
                        };
                        events.push(Event::Crossing { unit: i, direction });
                        self.units[i].bank = Some(bank);
                    }
                }
            }
        }

        // Simultaneous fire: every living unit hits its nearest enemy in range.
        let mut damage = vec![0u32; self.units.len()];
        for u in &self.units {
            if !u.alive() {
                continue;
            }
            let range = self.spec(u.group).range as usize;
            let target = self
                .units
                .iter()
                .enumerate()
                .filter(|(_, e)| e.alive() && e.group.side != u.group.side)
                .map(|(j, e)| (chebyshev(u.pos, e.pos), j))
                .filter(|(d, _)| *d <= range)
                .min();
            if let Some((_, j)) = target {
                damage[j] += self.spec(u.group).damage;
            }
        }
        for (j, d) in damage.into_iter().enumerate() {
            let u = &mut self.units[j];
            if d > 0 && u.alive() {
                u.hp = u.hp.saturating_sub(d);
                if u.hp == 0 {
                    events.push(Event::Kill {
                        side: u.group.side,
                        group: u.group.index,
                        unit: j,
                    });
                }
            }
        }

        let reward = reward_from_events(&events);
        self.cumulative_reward += reward;
        self.t += 1;
        self.done = self.side_eliminated(Side::Blue)
            || self.side_eliminated(Side::Red)
            || self.t >= self.config.t_max;
        let first = self
            .living_groups(Side::Blue)
            .first()
            .copied()
            .unwrap_or(GroupId::blue(0));
        Ok((
            self.observation(first),
            StepOutcome {
                reward: reward as f64,
                done: self.done,
                events,
            },
        ))
    }

    fn spec(&self, g: GroupId) -> UnitSpec {
        match g.side {
            Side::Blue => self.config.blue_units[g.index],
            Side::Red => self.config.red_units[g.index],
        }
    }

    /// Three planes (terrain, Blue occupancy, Red occupancy) of side S.
    /// Occupancy is hp/hp_max summed per cell and saturated at 1.
    pub fn render_screen(&self) -> Tensor {
        let s = self.config.map_size;
        let mut data = vec![0.0; SCREEN_CHANNELS * s * s];
        for y in 0..s {
            for x in 0..s {
                data[y * s + x] = self.terrain.plane_value(x, y);
            }
        }
        for u in self.units.iter().filter(|u| u.alive()) {
            let plane = match u.group.side {
                Side::Blue => 1,
                Side::Red => 2,
            };
            let cell = &mut data[plane * s * s + u.pos.1 * s + u.pos.0];
            *cell = (*cell + u.hp as f64 / u.hp_max as f64).min(1.0);
        }
        Tensor::new(vec![SCREEN_CHANNELS, s, s], data).expect("screen shape")
    }

    /// Nonspatial features: per unit slot (alive, hp/hp_max, x/S, y/S), Blue
    /// slots first; then (offset-encoded cumulative reward, t/T_max); then the
    /// one-hot of `selected` (a Blue group).
    pub fn encode_nonspatial(&self, selected: GroupId) -> Vec<f64> {
        let s = self.config.map_size as f64;
        let mut v = Vec::with_capacity(self.config.nonspatial_len());
        for u in &self.units {
            if u.alive() {
                v.extend_from_slice(&[
                    1.0,
                    u.hp as f64 / u.hp_max as f64,
                    u.pos.0 as f64 / s,
                    u.pos.1 as f64 / s,
                ]);
            } else {
                v.extend_from_slice(&[0.0; 4]);
            }
        }
        let scale = 10.0 * (2 * self.config.units_per_side()) as f64;
        v.push((0.5 + self.cumulative_reward as f64 / (2.0 * scale)).clamp(0.0, 1.0));
        v.push(self.t as f64 / self.config.t_max as f64);
        let mut one_hot = [0.0; GROUPS_PER_SIDE];
        one_hot[selected.index] = 1.0;
        v.extend_from_slice(&one_hot);
        v
    }

    /// Full observation for one Blue control group.
    pub fn observation(&self, group: GroupId) -> Observation {
        self.observation_with_screen(group, Arc::new(self.render_screen()))
    }

    fn observation_with_screen(&self, group: GroupId, screen: Arc<Tensor>) -> Observation {
        let mut control_group = [0.0; GROUPS_PER_SIDE];
        control_group[group.index] = 1.0;
        Observation {
            screen,
            nonspatial: self.encode_nonspatial(group),
            action_mask: [true; NUM_LOGITS],
            control_group,
        }
    }

    /// Observations for every living Blue group in roster order, sharing a
    /// single rendered screen.
    pub fn blue_observations(&self) -> Vec<(GroupId, Observation)> {
        let screen = Arc::new(self.render_screen());
        self.living_groups(Side::Blue)
            .into_iter()
            .map(|g| (g, self.observation_with_screen(g, Arc::clone(&screen))))
            .collect()
    }

    pub fn scripted_red(&self) -> BTreeMap<GroupId, FactoredAction> {
        scripted::red_actions(self)
    }

    pub fn health(&self, side: Side) -> HealthReport {
        let mut hp = [0u64; 5];
        let mut max = [0u64; 5];
        let mut casualties = 0;
        let mut initial = 0;
        for u in self.units.iter().filter(|u| u.group.side == side) {
            hp[u.group.index] += u.hp as u64;
            max[u.group.index] += u.hp_max as u64;
            initial += 1;
            if !u.alive() {
                casualties += 1;
            }
        }
        let mut group_pct = [0.0; 5];
        for i in 0..5 {
            group_pct[i] = if max[i] > 0 {
                100.0 * hp[i] as f64 / max[i] as f64
            } else {
                0.0
            };
        }
        let total_max: u64 = max.iter().sum();
        HealthReport {
            group_pct,
            total_pct: 100.0 * hp.iter().sum::<u64>() as f64 / total_max as f64,
            casualties,
            initial_units: initial,
        }
    }

    /// Test hook: replaces the unit list.
    #[doc(hidden)]
    pub fn set_units_for_test(&mut self, units: Vec<(GroupId, (usize, usize), u32)>) {
        self.units = units
            .into_iter()
            .map(|(group, pos, hp)| {
                let hp_max = self.spec(group).hp_max;
                Unit {
                    group,
                    pos,
                    hp,
                    hp_max,
                    bank: self.terrain.wadi().and_then(|w| w.bank(pos.0)),
                }
            })
            .collect();
        self.done = false;
    }
}

impl Environment for Scenario {
    fn reset_env(&mut self, seed: u64) {
        self.reset(seed);
    }

    fn observations(&self) -> Vec<(GroupId, Observation)> {
        self.blue_observations()
    }

    fn step_env(&mut self, actions: &[(GroupId, FactoredAction)]) -> Result<StepOutcome, ScenarioError> {
        let map: BTreeMap<GroupId, FactoredAction> = actions.iter().copied().collect();
        self.step(&map).map(|(_, outcome)| outcome)
    }

    fn done(&self) -> bool {
        self.done
    }
}
