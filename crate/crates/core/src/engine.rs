//! Execution traces and counterfactual trajectory pairs.
//!
//! For every visited state with at least `k` recorded successors, the
//! agent is forced to take a foil action once from a copy of the snapshot
//! and then follows its greedy policy for the remaining steps. The copy
//! includes the random stream, so forcing the fact action reproduces the
//! recorded trajectory exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentModel, DecomposedQ};
use crate::error::{Error, Result};
use crate::sim::{Action, Highway, Observation, RewardVector, SimState};
use crate::summary::{self, ImportanceScores};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub index: u32,
    /// State before `action` was taken.
    pub snapshot: SimState,
    pub obs: Observation,
    pub action: Action,
    pub reward: RewardVector,
    /// Q-values at decision time.
    pub q: DecomposedQ,
    pub terminated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalCause {
    Collision,
    StepCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    pub seed: u64,
    pub agent_id: String,
    pub steps: Vec<TraceStep>,
    /// State reached by the last step's action.
    pub final_state: SimState,
    pub terminal: TerminalCause,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// An origin can be paired when `k` fact steps follow it.
    pub fn is_eligible(&self, origin: usize, k: usize) -> bool {
        origin + k < self.steps.len()
    }

    pub fn eligible_origins(&self, k: usize) -> core::ops::Range<usize> {
        0..self.steps.len().saturating_sub(k)
    }

    pub fn trace_id(agent_id: &str, seed: u64) -> String {
        format!("{agent_id}-s{seed}")
    }
}

/// How the foil action is chosen at an origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CfMethod {
    #[default]
    SecondBest,
    Worst,
    UserChosen(Action),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovizConfig {
    pub k: usize,
    pub nsim: usize,
    pub cf_method: CfMethod,
    pub seed: u64,
}

impl Default for CovizConfig {
    fn default() -> Self {
        CovizConfig { k: 7, nsim: 200, cf_method: CfMethod::SecondBest, seed: 1000 }
    }
}

impl CovizConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.nsim < 1 {
            return Err(Error::Config("nsim must be >= 1".into()));
        }
        Ok(())
    }
}

/// A fact trajectory and the foil trajectory branching from the same origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CfPair {
    pub trace_id: String,
    pub agent_id: String,
    pub origin_index: usize,
    pub origin: SimState,
    pub fact_action: Action,
    pub origin_q: DecomposedQ,
    /// Trace states `origin+1 ..= origin+k`.
    pub fact: Vec<SimState>,
    /// At most `k` states; shorter only when the rollout terminated.
    pub foil: Vec<SimState>,
    pub foil_action: Action,
    pub cf_method: CfMethod,
    pub foil_terminal: Option<TerminalCause>,
    /// The foil's first successor equals the fact's.
    pub degenerate: bool,
    pub importance: ImportanceScores,
}

impl CfPair {
    pub fn k(&self) -> usize {
        self.fact.len()
    }

    pub fn fact_end(&self) -> &SimState {
        &self.fact[self.fact.len() - 1]
    }

    pub fn foil_end(&self) -> &SimState {
        &self.foil[self.foil.len() - 1]
    }
}

pub fn record_trace(model: &AgentModel, highway: &Highway, seed: u64) -> Result<Trace> {
    let mut state = highway.reset(seed);
    let mut steps = Vec::new();
    loop {
        let obs = highway.observe(&state);
        let q = model.decomposed_q(&obs);
        let action = q.greedy_action();
        let transition = highway.step(&state, action)?;
        steps.push(TraceStep {
            index: state.step_index,
            snapshot: state,
            obs,
            action,
            reward: transition.reward,
            q,
            terminated: transition.terminated,
        });
        if transition.terminated {
            let terminal = if transition.next.collided {
                TerminalCause::Collision
            } else {
                TerminalCause::StepCap
            };
            return Ok(Trace {
                id: Trace::trace_id(&model.id, seed),
                seed,
                agent_id: model.id.clone(),
                steps,
                final_state: transition.next,
                terminal,
            });
        }
        state = transition.next;
    }
}

/// `nsim` greedy episodes with seeds `base_seed, base_seed + 1, ...`.
pub fn collect_traces(model: &AgentModel, highway: &Highway, nsim: usize, base_seed: u64) -> Result<Vec<Trace>> {
    (0..nsim as u64)
        .map(|i| record_trace(model, highway, base_seed.wrapping_add(i)))
        .collect()
}

pub fn select_cf_action(q: &DecomposedQ, fact: Action, method: CfMethod) -> Result<Action> {
    match method {
        CfMethod::SecondBest => Ok(q.ranked_actions()[1]),
        CfMethod::Worst => Ok(q.ranked_actions()[Action::COUNT - 1]),
        CfMethod::UserChosen(action) if action == fact => Err(Error::InvalidFoil { foil: action }),
        CfMethod::UserChosen(action) => Ok(action),
    }
}

/// Forces `forced` once from a copy of `origin`, then follows the greedy
/// policy until `k` states are collected or the episode ends.
pub fn rollout_counterfactual(
    model: &AgentModel,
    highway: &Highway,
    origin: &SimState,
    forced: Action,
    k: usize,
) -> Result<(Vec<SimState>, Option<TerminalCause>)> {
    if highway.is_terminal(origin) {
        return Err(Error::Usage("counterfactual origin is terminal".into()));
    }
    let mut states: Vec<SimState> = Vec::with_capacity(k);
    let mut action = forced;
    let mut current = origin.clone();
    for _ in 0..k {
        let transition = highway.step(&current, action)?;
        states.push(transition.next.clone());
        if transition.terminated {
            let cause = if transition.next.collided {
                TerminalCause::Collision
            } else {
                TerminalCause::StepCap
            };
            return Ok((states, Some(cause)));
        }
        current = transition.next;
        action = model.greedy_action(&highway.observe(&current));
    }
    Ok((states, None))
}

/// Builds the pair at `origin` of `trace` with an explicit foil action.
pub fn pair_at(
    model: &AgentModel,
    highway: &Highway,
    trace: &Trace,
    origin: usize,
    foil_action: Action,
    cf_method: CfMethod,
    k: usize,
) -> Result<CfPair> {
    if trace.agent_id != model.id {
        return Err(Error::AgentMismatch { expected: model.id.clone(), found: trace.agent_id.clone() });
    }
    if k < 1 || !trace.is_eligible(origin, k) {
        return Err(Error::Ineligible { origin, k, len: trace.len() });
    }
    let step = &trace.steps[origin];
    if foil_action == step.action {
        return Err(Error::InvalidFoil { foil: foil_action });
    }
    let (foil, foil_terminal) = rollout_counterfactual(model, highway, &step.snapshot, foil_action, k)?;
    let fact: Vec<SimState> = trace.steps[origin + 1..=origin + k]
        .iter()
        .map(|s| s.snapshot.clone())
        .collect();
    let degenerate = foil[0] == fact[0];
    let mut pair = CfPair {
        trace_id: trace.id.clone(),
        agent_id: trace.agent_id.clone(),
        origin_index: origin,
        origin: step.snapshot.clone(),
        fact_action: step.action,
        origin_q: step.q,
        fact,
        foil,
        foil_action,
        cf_method,
        foil_terminal,
        degenerate,
        importance: ImportanceScores::default(),
    };
    pair.importance = summary::score_pair(model, highway, &pair);
    Ok(pair)
}

/// All pairs of one trace plus the number of environment steps spent on
/// foil rollouts.
pub fn pairs_for_trace(
    model: &AgentModel,
    highway: &Highway,
    trace: &Trace,
    config: &CovizConfig,
) -> Result<(Vec<CfPair>, usize)> {
    if trace.agent_id != model.id {
        return Err(Error::AgentMismatch { expected: model.id.clone(), found: trace.agent_id.clone() });
    }
    let mut pairs = Vec::new();
    let mut env_steps = 0;
    for origin in trace.eligible_origins(config.k) {
        let step = &trace.steps[origin];
        let foil_action = select_cf_action(&step.q, step.action, config.cf_method)?;
        let pair = pair_at(model, highway, trace, origin, foil_action, config.cf_method, config.k)?;
        env_steps += pair.foil.len();
        pairs.push(pair);
    }
    Ok((pairs, env_steps))
}

/// Pairs for every trace in canonical `(trace order, origin)` order.
pub fn generate_pairs(
    model: &AgentModel,
    highway: &Highway,
    traces: &[Trace],
    config: &CovizConfig,
) -> Result<Vec<CfPair>> {
    config.validate()?;
    let mut out = Vec::new();
    for trace in traces {
        out.extend(pairs_for_trace(model, highway, trace, config)?.0);
    }
    Ok(out)
}
