//! Reward-decomposed tabular Q-learning.
//!
//! Each reward component owns a Q-table head; the policy is greedy over the
//! sum of heads. Updates bootstrap every head on the same next action (the
//! argmax of the summed heads), so the heads stay an exact decomposition of
//! the Q-function of one shared policy.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::marker::PhantomData;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Action, EnvConfig, Highway, Observation, RewardVector, RewardWeights};

/// Reward components in canonical (summation) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    Cl,
    Hs,
    Rml,
    Col,
}

impl Component {
    pub const COUNT: usize = 4;
    pub const ALL: [Component; Component::COUNT] =
        [Component::Cl, Component::Hs, Component::Rml, Component::Col];

    pub fn label(self) -> &'static str {
        match self {
            Component::Cl => "CL",
            Component::Hs => "HS",
            Component::Rml => "RML",
            Component::Col => "COL",
        }
    }

    /// Lower-case key used in checkpoint files.
    pub fn key(self) -> &'static str {
        match self {
            Component::Cl => "cl",
            Component::Hs => "hs",
            Component::Rml => "rml",
            Component::Col => "col",
        }
    }
}

/// Q-values indexed `[component][action]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QMatrix<const C: usize, const A: usize> {
    pub values: [[f64; A]; C],
}

/// Q-values of the highway agent: 4 components × 5 actions.
pub type DecomposedQ = QMatrix<{ Component::COUNT }, { Action::COUNT }>;

impl<const C: usize, const A: usize> Default for QMatrix<C, A> {
    fn default() -> Self {
        QMatrix { values: [[0.0; A]; C] }
    }
}

impl<const C: usize, const A: usize> QMatrix<C, A> {
    pub fn new(values: [[f64; A]; C]) -> Self {
        QMatrix { values }
    }

    /// Builds a matrix whose first component carries `totals` and the rest are zero.
    pub fn from_totals(totals: [f64; A]) -> Self {
        let mut q = Self::default();
        if C > 0 {
            q.values[0] = totals;
        }
        q
    }

    /// Σ_c Q_c(a), summed in component order.
    pub fn total(&self, action: usize) -> f64 {
        let mut sum = 0.0;
        for row in &self.values {
            sum += row[action];
        }
        sum
    }

    pub fn totals(&self) -> [f64; A] {
        core::array::from_fn(|a| self.total(a))
    }

    /// Argmax of the totals; ties go to the lowest index.
    pub fn greedy_index(&self) -> usize {
        let totals = self.totals();
        let mut best = 0;
        for a in 1..A {
            if totals[a] > totals[best] {
                best = a;
            }
        }
        best
    }

    /// Action indices by descending total, ties by ascending index.
    pub fn ranked_indices(&self) -> [usize; A] {
        let totals = self.totals();
        let mut order: [usize; A] = core::array::from_fn(|a| a);
        // Stable sort keeps ascending index among equal totals.
        order.sort_by(|&x, &y| totals[y].partial_cmp(&totals[x]).unwrap_or(core::cmp::Ordering::Equal));
        order
    }

    pub fn max_total(&self) -> f64 {
        self.total(self.greedy_index())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

impl DecomposedQ {
    pub fn greedy_action(&self) -> Action {
        Action::ALL[self.greedy_index()]
    }

    pub fn ranked_actions(&self) -> [Action; Action::COUNT] {
        self.ranked_indices().map(|a| Action::ALL[a])
    }

    pub fn component(&self, component: Component, action: Action) -> f64 {
        self.values[component as usize][action.ordinal()]
    }

    pub fn total_of(&self, action: Action) -> f64 {
        self.total(action.ordinal())
    }
}

impl<const C: usize, const A: usize> Serialize for QMatrix<C, A> {
    fn serialize<S: Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.values.iter().map(|row| row.as_slice()))
    }
}

impl<'de, const C: usize, const A: usize> Deserialize<'de> for QMatrix<C, A> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        struct MatrixVisitor<const C: usize, const A: usize>(PhantomData<[[f64; A]; C]>);

        impl<'de, const C: usize, const A: usize> Visitor<'de> for MatrixVisitor<C, A> {
            type Value = QMatrix<C, A>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a {C}x{A} matrix of numbers")
            }

            fn visit_seq<S: SeqAccess<'de>>(self, mut seq: S) -> core::result::Result<Self::Value, S::Error> {
                let mut q = QMatrix::<C, A>::default();
                for c in 0..C {
                    let row: Vec<f64> = seq
                        .next_element()?
                        .ok_or_else(|| de::Error::invalid_length(c, &self))?;
                    if row.len() != A {
                        return Err(de::Error::invalid_length(row.len(), &self));
                    }
                    q.values[c].copy_from_slice(&row);
                }
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(C + 1, &self));
                }
                Ok(q)
            }
        }

        deserializer.deserialize_seq(MatrixVisitor::<C, A>(PhantomData))
    }
}

/// Tabular decomposed Q-function: unseen keys read as all-zero.
#[derive(Clone, Debug, PartialEq)]
pub struct HraTable<K, const C: usize, const A: usize> {
    entries: BTreeMap<K, QMatrix<C, A>>,
}

impl<K: Ord, const C: usize, const A: usize> Default for HraTable<K, C, A> {
    fn default() -> Self {
        HraTable { entries: BTreeMap::new() }
    }
}

impl<K: Ord + Clone, const C: usize, const A: usize> HraTable<K, C, A> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn q(&self, key: &K) -> QMatrix<C, A> {
        self.entries.get(key).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &QMatrix<C, A>)> {
        self.entries.iter()
    }

    pub fn insert(&mut self, key: K, q: QMatrix<C, A>) {
        self.entries.insert(key, q);
    }

    /// One Q-learning update of every head at `(key, action)`.
    ///
    /// `next` is `None` when the transition ends the episode (collision or
    /// step cap); the bootstrap term is then dropped. Otherwise every head
    /// bootstraps on `Q_c(next, a*)` with `a*` the greedy action of the
    /// summed heads at `next`.
    pub fn update(&mut self, key: &K, action: usize, rewards: &[f64; C], next: Option<&K>, alpha: f64, gamma: f64) {
        let bootstrap: [f64; C] = match next {
            Some(next_key) => {
                let next_q = self.q(next_key);
                let shared = next_q.greedy_index();
                core::array::from_fn(|c| next_q.values[c][shared])
            }
            None => [0.0; C],
        };
        let mut row = self.q(key);
        for c in 0..C {
            let current = row.values[c][action];
            row.values[c][action] = current + alpha * (rewards[c] + gamma * bootstrap[c] - current);
        }
        if self.entries.contains_key(key) || row != QMatrix::default() {
            self.entries.insert(key.clone(), row);
        }
    }
}

/// How the collision penalty is assigned to heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionFolding {
    /// Collision has its own fourth head.
    #[default]
    Separate,
    /// The penalty is split equally across the CL, HS and RML heads; the
    /// collision head stays zero.
    Uniform,
}

impl CollisionFolding {
    pub fn targets(self, reward: &RewardVector) -> [f64; Component::COUNT] {
        match self {
            CollisionFolding::Separate => reward.as_array(),
            CollisionFolding::Uniform => {
                let share = reward.col / 3.0;
                [reward.cl + share, reward.hs + share, reward.rml + share, 0.0]
            }
        }
    }
}

/// Linear decay from `start` to `end` over `decay_episodes`, then flat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: u32,
}

impl EpsilonSchedule {
    pub fn at(&self, episode: u32) -> f64 {
        if self.decay_episodes == 0 || episode >= self.decay_episodes {
            return self.end;
        }
        let frac = f64::from(episode) / f64::from(self.decay_episodes);
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
    pub episodes: u32,
    pub seed: u64,
    pub fold_collision: CollisionFolding,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 0.1,
            gamma: 0.9,
            epsilon: EpsilonSchedule { start: 1.0, end: 0.05, decay_episodes: 1600 },
            episodes: 2000,
            seed: 0,
            fold_collision: CollisionFolding::Separate,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(alloc::format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(alloc::format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        let eps = &self.epsilon;
        if !(0.0..=1.0).contains(&eps.start) || !(0.0..=1.0).contains(&eps.end) {
            return Err(Error::Config("epsilon values must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// The three study agents' reward-type preferences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentProfile {
    Agent1,
    Agent2,
    Agent3,
}

impl AgentProfile {
    pub const ALL: [AgentProfile; 3] = [AgentProfile::Agent1, AgentProfile::Agent2, AgentProfile::Agent3];

    pub fn weights(self) -> RewardWeights {
        match self {
            AgentProfile::Agent1 => RewardWeights::new(3.0, 1.0, 8.0, -3.0),
            AgentProfile::Agent2 => RewardWeights::new(5.0, 8.0, 1.0, -3.0),
            AgentProfile::Agent3 => RewardWeights::new(8.0, 1.0, 5.0, -3.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentProfile::Agent1 => "agent1",
            AgentProfile::Agent2 => "agent2",
            AgentProfile::Agent3 => "agent3",
        }
    }

    pub fn parse(name: &str) -> Option<AgentProfile> {
        AgentProfile::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub episodes: u32,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub env_steps: u64,
}

/// A trained (or fresh) decomposed agent, together with the environment it
/// was trained for.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentModel {
    pub id: String,
    pub table: HraTable<Observation, { Component::COUNT }, { Action::COUNT }>,
    pub gamma: f64,
    pub alpha: f64,
    pub fold_collision: CollisionFolding,
    pub env: EnvConfig,
    pub meta: Option<TrainingMeta>,
}

impl AgentModel {
    pub fn fresh(id: impl Into<String>, env: EnvConfig, hp: &Hyperparams) -> Self {
        AgentModel {
            id: id.into(),
            table: HraTable::new(),
            gamma: hp.gamma,
            alpha: hp.alpha,
            fold_collision: hp.fold_collision,
            env,
            meta: None,
        }
    }

    pub fn weights(&self) -> RewardWeights {
        self.env.weights
    }

    pub fn decomposed_q(&self, obs: &Observation) -> DecomposedQ {
        self.table.q(obs)
    }

    pub fn total_q(&self, obs: &Observation) -> [f64; Action::COUNT] {
        self.decomposed_q(obs).totals()
    }

    pub fn greedy_action(&self, obs: &Observation) -> Action {
        self.decomposed_q(obs).greedy_action()
    }

    /// V(s) = max_a Σ_c Q_c(s, a). Callers pass `None` for terminal states.
    pub fn state_value(&self, obs: Option<&Observation>) -> f64 {
        match obs {
            Some(obs) => self.decomposed_q(obs).max_total(),
            None => 0.0,
        }
    }

    pub fn train_step(
        &mut self,
        obs: &Observation,
        action: Action,
        reward: &RewardVector,
        next_obs: &Observation,
        terminated: bool,
    ) {
        let targets = self.fold_collision.targets(reward);
        let next = if terminated { None } else { Some(next_obs) };
        self.table.update(obs, action.ordinal(), &targets, next, self.alpha, self.gamma);
    }

    /// ε-greedy tabular training, deterministic in `hp.seed`.
    pub fn train(id: impl Into<String>, env: EnvConfig, hp: &Hyperparams) -> Result<AgentModel> {
        hp.validate()?;
        let highway = Highway::new(env.clone())?;
        let mut model = AgentModel::fresh(id, env, hp);
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let mut env_steps = 0u64;
        for episode in 0..hp.episodes {
            let epsilon = hp.epsilon.at(episode);
            let mut state = highway.reset(rng.random());
            let mut obs = highway.observe(&state);
            loop {
                let action = if rng.random::<f64>() < epsilon {
                    Action::ALL[rng.random_range(0..Action::COUNT)]
                } else {
                    model.greedy_action(&obs)
                };
                let transition = highway.step(&state, action)?;
                env_steps += 1;
                let next_obs = highway.observe(&transition.next);
                model.train_step(&obs, action, &transition.reward, &next_obs, transition.terminated);
                if transition.terminated {
                    break;
                }
                state = transition.next;
                obs = next_obs;
            }
        }
        model.meta = Some(TrainingMeta {
            episodes: hp.episodes,
            seed: hp.seed,
            hyperparams: hp.clone(),
            env_steps,
        });
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q_from_totals(totals: [f64; 5]) -> DecomposedQ {
        DecomposedQ::from_totals(totals)
    }

    #[test]
    fn fresh_model_is_zero() {
        let model = AgentModel::fresh("a", EnvConfig::default(), &Hyperparams::default());
        let obs = Highway::new(EnvConfig::default()).unwrap().observe(&Highway::new(EnvConfig::default()).unwrap().reset(1));
        assert_eq!(model.decomposed_q(&obs), DecomposedQ::default());
        assert_eq!(model.state_value(Some(&obs)), 0.0);
        assert_eq!(model.greedy_action(&obs), Action::LaneLeft);
    }

    #[test]
    fn greedy_and_ranking_examples() {
        let q = q_from_totals([1.0, 5.0, 3.0, 2.0, 4.0]);
        assert_eq!(q.greedy_action(), Action::Idle);
        assert_eq!(
            q.ranked_actions(),
            [Action::Idle, Action::Slower, Action::LaneRight, Action::Faster, Action::LaneLeft]
        );
        assert_eq!(q.max_total(), 5.0);
        assert_eq!(q_from_totals([7.0, 7.0, 0.0, 0.0, 0.0]).greedy_action(), Action::LaneLeft);
        assert_eq!(DecomposedQ::default().greedy_action(), Action::LaneLeft);
        assert_eq!(DecomposedQ::default().ranked_indices(), [0, 1, 2, 3, 4]);
    }

    #[test]
    fn terminal_update_with_unit_alpha_copies_rewards() {
        let hp = Hyperparams { alpha: 1.0, ..Hyperparams::default() };
        let mut model = AgentModel::fresh("a", EnvConfig::default(), &hp);
        let obs: Observation = "l2v1o000000r0".parse().unwrap();
        let next: Observation = "l3v1o000000r1".parse().unwrap();
        let reward = RewardVector { cl: 3.0, hs: 0.5, rml: 8.0, col: -3.0 };
        model.train_step(&obs, Action::LaneRight, &reward, &next, true);
        let q = model.decomposed_q(&obs);
        assert_eq!(q.component(Component::Col, Action::LaneRight), -3.0);
        assert_eq!(q.component(Component::Cl, Action::LaneRight), 3.0);
        assert_eq!(q.component(Component::Hs, Action::LaneRight), 0.5);
        assert_eq!(q.component(Component::Rml, Action::LaneRight), 8.0);
        assert_eq!(q.component(Component::Cl, Action::Idle), 0.0);
    }

    #[test]
    fn zero_reward_leaves_zero_model_unchanged() {
        let mut model = AgentModel::fresh("a", EnvConfig::default(), &Hyperparams::default());
        let before = model.clone();
        let obs: Observation = "l1v0o000000r0".parse().unwrap();
        model.train_step(&obs, Action::Idle, &RewardVector::default(), &obs, false);
        assert_eq!(model, before);
    }

    #[test]
    fn uniform_folding_splits_collision() {
        let r = RewardVector { cl: 0.0, hs: 1.0, rml: 8.0, col: -3.0 };
        assert_eq!(CollisionFolding::Uniform.targets(&r), [-1.0, 0.0, 7.0, 0.0]);
        assert_eq!(CollisionFolding::Separate.targets(&r), [0.0, 1.0, 8.0, -3.0]);
    }

    #[test]
    fn three_state_chain_converges_to_geometric_sums() {
        // 0 -> 1 -> 2 -> 0 ... with a single action and reward (1, 2) on every
        // step: Q_c = r_c / (1 - γ).
        let gamma = 0.9;
        let mut table: HraTable<u8, 2, 1> = HraTable::new();
        for _ in 0..2000 {
            for s in 0u8..3 {
                table.update(&s, 0, &[1.0, 2.0], Some(&((s + 1) % 3)), 0.5, gamma);
            }
        }
        for s in 0u8..3 {
            let q = table.q(&s);
            assert!((q.values[0][0] - 10.0).abs() < 1e-6);
            assert!((q.values[1][0] - 20.0).abs() < 1e-6);
        }
    }

    #[test]
    fn update_uses_one_shared_argmax() {
        // At `next`, head 0 prefers action 0 and head 1 prefers action 1, but
        // the summed greedy action is 1.
        let mut table: HraTable<u8, 2, 2> = HraTable::new();
        table.insert(1, QMatrix::new([[4.0, 3.0], [0.0, 2.0]]));
        table.update(&0, 0, &[0.0, 0.0], Some(&1), 1.0, 0.5);
        let q = table.q(&0);
        assert_eq!(q.values[0][0], 1.5);
        assert_eq!(q.values[1][0], 1.0);
        // Per-head argmax would have bootstrapped head 0 on 4.0 instead.
        assert_ne!(q.values[0][0], 0.5 * 4.0);
    }

    #[test]
    fn epsilon_schedule_decays_linearly() {
        let s = EpsilonSchedule { start: 1.0, end: 0.05, decay_episodes: 1600 };
        assert_eq!(s.at(0), 1.0);
        assert!((s.at(800) - 0.525).abs() < 1e-12);
        assert_eq!(s.at(1600), 0.05);
        assert_eq!(s.at(1999), 0.05);
    }

    #[test]
    fn profiles_match_study_weights() {
        assert_eq!(AgentProfile::Agent1.weights(), RewardWeights::new(3.0, 1.0, 8.0, -3.0));
        assert_eq!(AgentProfile::Agent2.weights(), RewardWeights::new(5.0, 8.0, 1.0, -3.0));
        assert_eq!(AgentProfile::Agent3.weights(), RewardWeights::new(8.0, 1.0, 5.0, -3.0));
        assert_eq!(AgentProfile::parse("agent2"), Some(AgentProfile::Agent2));
        assert_eq!(AgentProfile::parse("agent9"), None);
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams { alpha: 0.0, ..Hyperparams::default() }.validate().is_err());
        assert!(Hyperparams { gamma: 1.0, ..Hyperparams::default() }.validate().is_err());
        assert!(Hyperparams::default().validate().is_ok());
    }

    #[test]
    fn matrix_serde_checks_shape() {
        let q = QMatrix::<2, 3>::new([[1.0, 2.0, 3.0], [4.0, 5.5, -6.0]]);
        let text = serde_json::to_string(&q).unwrap();
        assert_eq!(text, "[[1.0,2.0,3.0],[4.0,5.5,-6.0]]");
        assert_eq!(serde_json::from_str::<QMatrix<2, 3>>(&text).unwrap(), q);
        assert!(serde_json::from_str::<QMatrix<2, 3>>("[[1.0,2.0],[4.0,5.5]]").is_err());
        assert!(serde_json::from_str::<QMatrix<2, 3>>("[[1,2,3]]").is_err());
    }

    fn naive_rank(totals: &[f64; 5]) -> [usize; 5] {
        // Position of action a = number of actions that beat it.
        let mut order = [0usize; 5];
        for a in 0..5 {
            let beaten_by = (0..5)
                .filter(|&b| totals[b] > totals[a] || (totals[b] == totals[a] && b < a))
                .count();
            order[beaten_by] = a;
        }
        order
    }

    proptest! {
        #[test]
        fn ranking_matches_pairwise_oracle(totals in proptest::array::uniform5(-4i32..4)) {
            let totals = totals.map(f64::from);
            let q = q_from_totals(totals);
            prop_assert_eq!(q.ranked_indices(), naive_rank(&totals));
            prop_assert_eq!(q.ranked_indices()[0], q.greedy_index());
        }

        #[test]
        fn totals_are_component_sums(values in proptest::array::uniform4(proptest::array::uniform5(-100.0f64..100.0))) {
            let q = DecomposedQ::new(values);
            for a in 0..5 {
                let expected = ((values[0][a] + values[1][a]) + values[2][a]) + values[3][a];
                prop_assert_eq!(q.total(a), expected);
            }
        }
    }
}
