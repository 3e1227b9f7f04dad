//! Multi-lane highway simulation.
//!
//! Time is discrete: one action per tick, `dt` seconds per tick. The ego
//! vehicle changes lane instantly and picks its speed from a fixed ladder.
//! Other vehicles keep their lane and speed; once they fall too far behind
//! the ego they are respawned ahead of it. The only randomness is the
//! ChaCha stream stored inside [`SimState`], so cloning a state clones its
//! future.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five discrete driving actions. Ordinals are part of the file formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum Action {
    LaneLeft = 0,
    Idle = 1,
    LaneRight = 2,
    Faster = 3,
    Slower = 4,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; Action::COUNT] = [
        Action::LaneLeft,
        Action::Idle,
        Action::LaneRight,
        Action::Faster,
        Action::Slower,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Action> {
        Action::ALL.get(ordinal).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::LaneLeft => "lane-left",
            Action::Idle => "idle",
            Action::LaneRight => "lane-right",
            Action::Faster => "faster",
            Action::Slower => "slower",
        }
    }
}

impl From<Action> for u8 {
    fn from(action: Action) -> u8 {
        action as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Action::from_ordinal(value as usize)
            .ok_or_else(|| Error::Config(format!("action ordinal {value} out of range 0..5")))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;

    /// Accepts the kebab-case name, the CamelCase variant name, or the ordinal.
    fn from_str(s: &str) -> Result<Self> {
        let lowered = s.trim().to_ascii_lowercase();
        let action = match lowered.as_str() {
            "lane-left" | "laneleft" | "left" | "0" => Action::LaneLeft,
            "idle" | "1" => Action::Idle,
            "lane-right" | "laneright" | "right" | "2" => Action::LaneRight,
            "faster" | "3" => Action::Faster,
            "slower" | "4" => Action::Slower,
            _ => return Err(Error::Config(format!("unknown action `{s}`"))),
        };
        Ok(action)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    /// 0 is the leftmost lane, `lanes - 1` the rightmost.
    pub lane: usize,
    /// Longitudinal position in meters.
    pub x: f64,
    pub speed_level: usize,
}

/// Complete world state. Cloning is a snapshot; stepping never mutates its input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ego: Vehicle,
    pub others: Vec<Vehicle>,
    pub step_index: u32,
    pub collided: bool,
    pub rng: ChaCha8Rng,
}

/// Per-step reward split into its four components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    /// Lane change.
    pub cl: f64,
    /// High speed.
    pub hs: f64,
    /// Right-most lane.
    pub rml: f64,
    /// Collision, non-positive.
    pub col: f64,
}

impl RewardVector {
    /// Components in canonical order (CL, HS, RML, COL).
    pub fn as_array(&self) -> [f64; 4] {
        [self.cl, self.hs, self.rml, self.col]
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub cl: f64,
    pub hs: f64,
    pub rml: f64,
    pub col: f64,
}

impl RewardWeights {
    pub const fn new(cl: f64, hs: f64, rml: f64, col: f64) -> Self {
        RewardWeights { cl, hs, rml, col }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RewardWeights::new(
            self.cl * factor,
            self.hs * factor,
            self.rml * factor,
            self.col * factor,
        )
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights::new(3.0, 1.0, 8.0, -3.0)
    }
}

/// Static environment parameters. Distances in meters, speeds in m/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub lanes: usize,
    pub vehicles: usize,
    /// Speed ladder, strictly increasing.
    pub speeds: Vec<f64>,
    /// Other vehicles draw their speed level from `0..other_speed_levels`.
    pub other_speed_levels: usize,
    pub episode_cap: u32,
    pub car_length: f64,
    pub dt: f64,
    pub start_lane: usize,
    pub start_speed_level: usize,
    /// Initial placement window ahead of the ego.
    pub spawn_min: f64,
    pub spawn_max: f64,
    /// Respawn window ahead of the ego for vehicles left behind.
    pub respawn_min: f64,
    pub despawn_behind: f64,
    /// Minimum same-lane gap kept when placing a vehicle.
    pub spawn_gap: f64,
    pub lookahead: f64,
    pub lookbehind: f64,
    pub weights: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            lanes: 4,
            vehicles: 10,
            speeds: alloc::vec![20.0, 25.0, 30.0],
            other_speed_levels: 2,
            episode_cap: 80,
            car_length: 5.0,
            dt: 1.0,
            start_lane: 1,
            start_speed_level: 0,
            spawn_min: 20.0,
            spawn_max: 220.0,
            respawn_min: 80.0,
            despawn_behind: 40.0,
            spawn_gap: 15.0,
            lookahead: 40.0,
            lookbehind: 20.0,
            weights: RewardWeights::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.lanes < 2 {
            return fail(format!("lanes must be >= 2, got {}", self.lanes));
        }
        if self.speeds.is_empty() {
            return fail("speed ladder is empty".into());
        }
        if self.speeds.iter().any(|v| !v.is_finite()) {
            return fail("speed ladder contains a non-finite value".into());
        }
        if self.speeds.windows(2).any(|w| w[0] >= w[1]) {
            return fail("speed ladder must be strictly increasing".into());
        }
        if self.episode_cap < 1 {
            return fail("episode_cap must be >= 1".into());
        }
        if self.other_speed_levels == 0 || self.other_speed_levels > self.speeds.len() {
            return fail(format!(
                "other_speed_levels must be in 1..={}, got {}",
                self.speeds.len(),
                self.other_speed_levels
            ));
        }
        if self.start_lane >= self.lanes {
            return fail(format!("start_lane {} outside 0..{}", self.start_lane, self.lanes));
        }
        if self.start_speed_level >= self.speeds.len() {
            return fail(format!("start_speed_level {} outside the ladder", self.start_speed_level));
        }
        let positive = [
            ("car_length", self.car_length),
            ("dt", self.dt),
            ("lookahead", self.lookahead),
            ("lookbehind", self.lookbehind),
            ("despawn_behind", self.despawn_behind),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return fail(format!("{name} must be positive and finite, got {value}"));
            }
        }
        if !(self.spawn_min.is_finite() && self.spawn_max.is_finite() && self.spawn_min < self.spawn_max)
        {
            return fail("spawn window must satisfy spawn_min < spawn_max".into());
        }
        if !(self.respawn_min.is_finite() && self.respawn_min < self.spawn_max) {
            return fail("respawn_min must be below spawn_max".into());
        }
        if !(self.spawn_gap.is_finite() && self.spawn_gap >= 0.0) {
            return fail("spawn_gap must be non-negative".into());
        }
        let w = &self.weights;
        if [w.cl, w.hs, w.rml, w.col].iter().any(|v| !v.is_finite()) {
            return fail("reward weights must be finite".into());
        }
        if w.cl < 0.0 || w.hs < 0.0 || w.rml < 0.0 {
            return fail("lane-change, speed and right-lane weights must be >= 0".into());
        }
        if w.col >= 0.0 {
            return fail(format!("collision weight must be negative, got {}", w.col));
        }
        Ok(())
    }

    pub fn min_speed(&self) -> f64 {
        self.speeds[0]
    }

    pub fn max_speed(&self) -> f64 {
        self.speeds[self.speeds.len() - 1]
    }
}

/// Compact discrete view of the ego's surroundings, used as the Q-table key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub ego_lane: u8,
    pub ego_speed_level: u8,
    /// `[ahead_left, ahead_same, ahead_right, behind_left, behind_same, behind_right]`.
    pub occupancy: [bool; 6],
    pub at_right_most: bool,
}

impl Observation {
    pub const AHEAD_LEFT: usize = 0;
    pub const AHEAD_SAME: usize = 1;
    pub const AHEAD_RIGHT: usize = 2;
    pub const BEHIND_LEFT: usize = 3;
    pub const BEHIND_SAME: usize = 4;
    pub const BEHIND_RIGHT: usize = 5;
}

/// Stable text key: `l{lane}v{speed}o{six 0/1 bits}r{0/1}`.
impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}v{}o", self.ego_lane, self.ego_speed_level)?;
        for bit in self.occupancy {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        write!(f, "r{}", u8::from(self.at_right_most))
    }
}

impl FromStr for Observation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed observation key `{s}`"));
        let rest = s.strip_prefix('l').ok_or_else(bad)?;
        let (lane, rest) = rest.split_once('v').ok_or_else(bad)?;
        let (speed, rest) = rest.split_once('o').ok_or_else(bad)?;
        let (bits, right) = rest.split_once('r').ok_or_else(bad)?;
        if bits.len() != 6 {
            return Err(bad());
        }
        let mut occupancy = [false; 6];
        for (slot, ch) in occupancy.iter_mut().zip(bits.chars()) {
            *slot = match ch {
                '0' => false,
                '1' => true,
                _ => return Err(bad()),
            };
        }
        let at_right_most = match right {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        Ok(Observation {
            ego_lane: lane.parse().map_err(|_| bad())?,
            ego_speed_level: speed.parse().map_err(|_| bad())?,
            occupancy,
            at_right_most,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub next: SimState,
    pub reward: RewardVector,
    pub terminated: bool,
}

/// A validated [`EnvConfig`] plus the transition function.
#[derive(Clone, Debug, PartialEq)]
pub struct Highway {
    config: EnvConfig,
}

impl Highway {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Highway { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reset(&self, seed: u64) -> SimState {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ego = Vehicle {
            lane: cfg.start_lane,
            x: 0.0,
            speed_level: cfg.start_speed_level,
        };
        let mut others: Vec<Vehicle> = Vec::with_capacity(cfg.vehicles);
        for _ in 0..cfg.vehicles {
            let v = self.spawn(&mut rng, &others, ego.x + cfg.spawn_min, ego.x + cfg.spawn_max);
            others.push(v);
        }
        SimState {
            ego,
            others,
            step_index: 0,
            collided: false,
            rng,
        }
    }

    /// Draws lane, position and speed; retries a few times to keep `spawn_gap`
    /// from vehicles already in that lane.
    fn spawn(&self, rng: &mut ChaCha8Rng, existing: &[Vehicle], lo: f64, hi: f64) -> Vehicle {
        const ATTEMPTS: usize = 8;
        let cfg = &self.config;
        let mut candidate = Vehicle { lane: 0, x: lo, speed_level: 0 };
        for _ in 0..ATTEMPTS {
            candidate = Vehicle {
                lane: rng.random_range(0..cfg.lanes),
                x: rng.random_range(lo..hi),
                speed_level: rng.random_range(0..cfg.other_speed_levels),
            };
            let clear = existing
                .iter()
                .filter(|v| v.lane == candidate.lane)
                .all(|v| abs(v.x - candidate.x) >= cfg.spawn_gap);
            if clear {
                break;
            }
        }
        candidate
    }

    pub fn is_terminal(&self, state: &SimState) -> bool {
        state.collided || state.step_index >= self.config.episode_cap
    }

    pub fn speed(&self, vehicle: &Vehicle) -> f64 {
        self.config.speeds[vehicle.speed_level]
    }

    pub fn step(&self, state: &SimState, action: Action) -> Result<Transition> {
        if self.is_terminal(state) {
            return Err(Error::Usage(format!(
                "cannot step a terminal state (step {}, collided {})",
                state.step_index, state.collided
            )));
        }
        let cfg = &self.config;
        let mut next = state.clone();
        let ego = &mut next.ego;
        match action {
            Action::LaneLeft => ego.lane = ego.lane.saturating_sub(1),
            Action::LaneRight => ego.lane = (ego.lane + 1).min(cfg.lanes - 1),
            Action::Faster => ego.speed_level = (ego.speed_level + 1).min(cfg.speeds.len() - 1),
            Action::Slower => ego.speed_level = ego.speed_level.saturating_sub(1),
            Action::Idle => {}
        }
        ego.x += cfg.speeds[ego.speed_level] * cfg.dt;
        for other in &mut next.others {
            other.x += cfg.speeds[other.speed_level] * cfg.dt;
        }
        let (ego_lane, ego_x) = (next.ego.lane, next.ego.x);
        next.collided = next
            .others
            .iter()
            .any(|v| v.lane == ego_lane && abs(v.x - ego_x) < cfg.car_length);

        for i in 0..next.others.len() {
            if next.others[i].x < ego_x - cfg.despawn_behind {
                let fresh = self.spawn(
                    &mut next.rng,
                    &next.others,
                    ego_x + cfg.respawn_min,
                    ego_x + cfg.spawn_max,
                );
                next.others[i] = fresh;
            }
        }
        next.step_index = state.step_index + 1;

        let reward = self.compute_reward(state, action, &next);
        let terminated = self.is_terminal(&next);
        Ok(Transition { next, reward, terminated })
    }

    /// Reward for the transition `prev --action--> next`.
    pub fn compute_reward(&self, prev: &SimState, _action: Action, next: &SimState) -> RewardVector {
        let cfg = &self.config;
        let w = &cfg.weights;
        let span = cfg.max_speed() - cfg.min_speed();
        let speed_frac = if span > 0.0 {
            (self.speed(&next.ego) - cfg.min_speed()) / span
        } else {
            0.0
        };
        RewardVector {
            cl: if next.ego.lane != prev.ego.lane { w.cl } else { 0.0 },
            hs: w.hs * speed_frac,
            rml: if next.ego.lane == cfg.lanes - 1 { w.rml } else { 0.0 },
            col: if next.collided { w.col } else { 0.0 },
        }
    }

    pub fn observe(&self, state: &SimState) -> Observation {
        let cfg = &self.config;
        let ego = &state.ego;
        let mut occupancy = [false; 6];
        for other in &state.others {
            let column = if other.lane + 1 == ego.lane {
                0
            } else if other.lane == ego.lane {
                1
            } else if other.lane == ego.lane + 1 {
                2
            } else {
                continue;
            };
            let dx = other.x - ego.x;
            if dx >= 0.0 && dx < cfg.lookahead {
                occupancy[column] = true;
            } else if dx < 0.0 && dx > -cfg.lookbehind {
                occupancy[3 + column] = true;
            }
        }
        Observation {
            ego_lane: ego.lane as u8,
            ego_speed_level: ego.speed_level as u8,
            occupancy,
            at_right_most: ego.lane == cfg.lanes - 1,
        }
    }

    /// Re-runs `actions` from `reset(seed)`, returning every visited state
    /// (the reset state first).
    pub fn replay(&self, seed: u64, actions: &[Action]) -> Result<Vec<SimState>> {
        let mut states = Vec::with_capacity(actions.len() + 1);
        states.push(self.reset(seed));
        for (i, &action) in actions.iter().enumerate() {
            let current = &states[states.len() - 1];
            if self.is_terminal(current) {
                return Err(Error::Usage(format!(
                    "action {i} ({action}) applied after the episode terminated"
                )));
            }
            let transition = self.step(current, action)?;
            states.push(transition.next);
        }
        Ok(states)
    }
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    if x < 0.0 {
        -x
    } else {
        x
    }
}
