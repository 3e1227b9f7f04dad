//! Pair importance and global summary selection.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentModel, DecomposedQ};
use crate::engine::CfPair;
use crate::sim::{Highway, SimState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ImportanceMethod {
    LastState,
    QDiffSecondBest,
    QDiffWorst,
    Frequency { seed: u64 },
}

impl ImportanceMethod {
    pub fn is_score_based(self) -> bool {
        !matches!(self, ImportanceMethod::Frequency { .. })
    }

    pub fn name(self) -> &'static str {
        match self {
            ImportanceMethod::LastState => "last-state",
            ImportanceMethod::QDiffSecondBest => "qdiff-second",
            ImportanceMethod::QDiffWorst => "qdiff-worst",
            ImportanceMethod::Frequency { .. } => "frequency",
        }
    }

    /// Parses a method name; `frequency` takes `seed`.
    pub fn parse(name: &str, seed: u64) -> Option<ImportanceMethod> {
        Some(match name {
            "last-state" | "laststate" => ImportanceMethod::LastState,
            "qdiff-second" | "qdiff-second-best" | "qdiff" => ImportanceMethod::QDiffSecondBest,
            "qdiff-worst" => ImportanceMethod::QDiffWorst,
            "frequency" => ImportanceMethod::Frequency { seed },
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QDiffVariant {
    SecondBest,
    Worst,
}

/// Scores stored with every pair at generation time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub last_state: f64,
    pub qdiff_second_best: f64,
    pub qdiff_worst: f64,
}

impl ImportanceScores {
    pub fn get(&self, method: ImportanceMethod) -> Option<f64> {
        match method {
            ImportanceMethod::LastState => Some(self.last_state),
            ImportanceMethod::QDiffSecondBest => Some(self.qdiff_second_best),
            ImportanceMethod::QDiffWorst => Some(self.qdiff_worst),
            ImportanceMethod::Frequency { .. } => None,
        }
    }
}

/// V(s) with the terminal convention V = 0.
pub fn value_of(model: &AgentModel, highway: &Highway, state: &SimState) -> f64 {
    if highway.is_terminal(state) {
        0.0
    } else {
        model.state_value(Some(&highway.observe(state)))
    }
}

/// |V(fact endpoint) − V(foil endpoint)|.
pub fn last_state_importance(model: &AgentModel, highway: &Highway, pair: &CfPair) -> f64 {
    let fact = value_of(model, highway, pair.fact_end());
    let foil = value_of(model, highway, pair.foil_end());
    crate::sim::abs(fact - foil)
}

pub fn qdiff_importance(q: &DecomposedQ, variant: QDiffVariant) -> f64 {
    let ranked = q.ranked_indices();
    let best = q.total(ranked[0]);
    let other = match variant {
        QDiffVariant::SecondBest => q.total(ranked[1]),
        QDiffVariant::Worst => q.total(ranked[ranked.len() - 1]),
    };
    best - other
}

pub fn score_pair(model: &AgentModel, highway: &Highway, pair: &CfPair) -> ImportanceScores {
    ImportanceScores {
        last_state: last_state_importance(model, highway, pair),
        qdiff_second_best: qdiff_importance(&pair.origin_q, QDiffVariant::SecondBest),
        qdiff_worst: qdiff_importance(&pair.origin_q, QDiffVariant::Worst),
    }
}

/// Shared fact-trajectory time indices `[i, i+k]` (origin included);
/// zero across traces.
pub fn overlap_count(a: &CfPair, b: &CfPair) -> usize {
    if a.trace_id != b.trace_id {
        return 0;
    }
    let lo = a.origin_index.max(b.origin_index);
    let hi = (a.origin_index + a.k()).min(b.origin_index + b.k());
    if hi < lo {
        0
    } else {
        hi - lo + 1
    }
}

/// A seeded uniformly random permutation of `0..len`.
fn sample_order(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, len, len).into_vec()
}

/// `n` distinct pairs drawn uniformly, returned in canonical order. States
/// the agent visits more often own more origins and are drawn more often.
pub fn frequency_select(pairs: &[CfPair], n: usize, seed: u64) -> Vec<CfPair> {
    if n >= pairs.len() {
        return pairs.to_vec();
    }
    let mut picked: Vec<usize> = sample_order(pairs.len(), seed).into_iter().take(n).collect();
    picked.sort_unstable();
    picked.into_iter().map(|i| pairs[i].clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub pair: CfPair,
    /// `None` for frequency sampling.
    pub score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub agent_id: String,
    pub manifest_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub entries: Vec<SummaryEntry>,
    pub method: ImportanceMethod,
    pub n: usize,
    pub overlap_limit: usize,
    pub provenance: Provenance,
}

impl Summary {
    /// Size, ordering and overlap invariants.
    pub fn check(&self) -> core::result::Result<(), String> {
        if self.entries.len() > self.n {
            return Err(alloc::format!("{} entries exceed n = {}", self.entries.len(), self.n));
        }
        if self.method.is_score_based() {
            for w in self.entries.windows(2) {
                match (w[0].score, w[1].score) {
                    (Some(a), Some(b)) if a >= b => {}
                    _ => return Err("scores are not non-increasing".into()),
                }
            }
        }
        for (i, later) in self.entries.iter().enumerate() {
            for earlier in &self.entries[..i] {
                let shared = overlap_count(&earlier.pair, &later.pair);
                if shared > self.overlap_limit {
                    return Err(alloc::format!(
                        "{}@{} and {}@{} share {shared} states",
                        earlier.pair.trace_id,
                        earlier.pair.origin_index,
                        later.pair.trace_id,
                        later.pair.origin_index
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn min_score(&self) -> Option<f64> {
        self.entries.iter().filter_map(|e| e.score).reduce(f64::min)
    }
}

fn canonical_cmp(a: &CfPair, b: &CfPair) -> Ordering {
    a.trace_id.cmp(&b.trace_id).then(a.origin_index.cmp(&b.origin_index))
}

fn admits(selected: &[SummaryEntry], candidate: &CfPair, overlap_limit: usize) -> bool {
    !candidate.degenerate
        && selected
            .iter()
            .all(|e| overlap_count(&e.pair, candidate) <= overlap_limit)
}

/// Greedy top-`n` selection: descending score (ties in canonical pair
/// order), skipping degenerate pairs and pairs that share more than
/// `overlap_limit` states with an earlier pick. Frequency sampling walks a
/// seeded random order under the same constraints.
pub fn top_importance(pairs: &[CfPair], method: ImportanceMethod, n: usize, overlap_limit: usize) -> Summary {
    let mut order: Vec<usize> = match method {
        ImportanceMethod::Frequency { seed } => sample_order(pairs.len(), seed),
        _ => (0..pairs.len()).collect(),
    };
    if method.is_score_based() {
        order.sort_by(|&x, &y| {
            let sx = pairs[x].importance.get(method).unwrap_or(0.0);
            let sy = pairs[y].importance.get(method).unwrap_or(0.0);
            sy.partial_cmp(&sx)
                .unwrap_or(Ordering::Equal)
                .then_with(|| canonical_cmp(&pairs[x], &pairs[y]))
        });
    }
    let mut entries: Vec<SummaryEntry> = Vec::with_capacity(n);
    for i in order {
        if entries.len() >= n {
            break;
        }
        let pair = &pairs[i];
        if admits(&entries, pair, overlap_limit) {
            entries.push(SummaryEntry { pair: pair.clone(), score: pair.importance.get(method) });
        }
    }
    Summary {
        entries,
        method,
        n,
        overlap_limit,
        provenance: Provenance {
            agent_id: pairs.first().map(|p| p.agent_id.clone()).unwrap_or_default(),
            manifest_hash: None,
        },
    }
}

/// The foil reaches a state identical to the fact's at the same offset.
pub fn foil_rejoins(pair: &CfPair) -> bool {
    pair.fact.iter().zip(&pair.foil).any(|(fact, foil)| fact == foil)
}

/// Fraction of pairs whose foil rejoins the fact within `k` steps.
pub fn rejoin_fraction<'a>(pairs: impl IntoIterator<Item = &'a CfPair>) -> Option<f64> {
    let (mut total, mut rejoined) = (0usize, 0usize);
    for pair in pairs {
        total += 1;
        rejoined += usize::from(foil_rejoins(pair));
    }
    (total > 0).then(|| rejoined as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Hyperparams;
    use crate::engine::{CfMethod, TerminalCause};
    use crate::sim::{Action, EnvConfig, Observation};
    use alloc::format;
    use alloc::vec;

    fn highway() -> Highway {
        Highway::new(EnvConfig::default()).unwrap()
    }

    fn pair(trace: &str, origin: usize, score: f64) -> CfPair {
        let hw = highway();
        let s = hw.reset(0);
        CfPair {
            trace_id: trace.into(),
            agent_id: "a".into(),
            origin_index: origin,
            origin: s.clone(),
            fact_action: Action::Idle,
            origin_q: DecomposedQ::default(),
            fact: vec![s.clone(); 7],
            foil: vec![s; 7],
            foil_action: Action::Faster,
            cf_method: CfMethod::SecondBest,
            foil_terminal: None,
            degenerate: false,
            importance: ImportanceScores { last_state: score, qdiff_second_best: 0.0, qdiff_worst: 0.0 },
        }
    }

    #[test]
    fn qdiff_examples() {
        let q = DecomposedQ::from_totals([1.0, 5.0, 3.0, 2.0, 4.0]);
        assert_eq!(qdiff_importance(&q, QDiffVariant::Worst), 4.0);
        assert_eq!(qdiff_importance(&q, QDiffVariant::SecondBest), 1.0);
        let flat = DecomposedQ::from_totals([2.0; 5]);
        assert_eq!(qdiff_importance(&flat, QDiffVariant::Worst), 0.0);
        assert_eq!(qdiff_importance(&flat, QDiffVariant::SecondBest), 0.0);
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_count(&pair("t", 0, 0.0), &pair("t", 2, 0.0)), 6);
        assert_eq!(overlap_count(&pair("t", 0, 0.0), &pair("t", 3, 0.0)), 5);
        assert_eq!(overlap_count(&pair("t", 0, 0.0), &pair("u", 0, 0.0)), 0);
        assert_eq!(overlap_count(&pair("t", 0, 0.0), &pair("t", 8, 0.0)), 0);
        assert_eq!(overlap_count(&pair("t", 0, 0.0), &pair("t", 7, 0.0)), 1);
    }

    fn model_with_value(obs: &Observation, value: f64) -> AgentModel {
        let mut model = AgentModel::fresh("a", EnvConfig::default(), &Hyperparams::default());
        model.table.insert(*obs, DecomposedQ::from_totals([value, 0.0, 0.0, 0.0, 0.0]));
        model
    }

    #[test]
    fn last_state_examples() {
        let hw = highway();
        let mut fact_end = hw.reset(0);
        fact_end.others.clear();
        fact_end.ego.lane = 2;
        let mut foil_end = fact_end.clone();
        foil_end.ego.lane = 3;

        let mut p = pair("t", 0, 0.0);
        p.fact = vec![fact_end.clone(); 7];
        p.foil = vec![fact_end.clone(); 7];
        let model = model_with_value(&hw.observe(&fact_end), 10.0);
        assert_eq!(last_state_importance(&model, &hw, &p), 0.0);

        let mut model = model;
        model.table.insert(hw.observe(&foil_end), DecomposedQ::from_totals([4.0, 0.0, 0.0, 0.0, 0.0]));
        p.foil = vec![foil_end.clone(); 7];
        assert_eq!(last_state_importance(&model, &hw, &p), 6.0);

        // A crashed foil counts as V = 0 even if its observation has a value.
        let mut crashed = foil_end;
        crashed.collided = true;
        p.foil = vec![crashed; 3];
        p.foil_terminal = Some(TerminalCause::Collision);
        let model = model_with_value(&hw.observe(&fact_end), 7.3);
        assert_eq!(last_state_importance(&model, &hw, &p), 7.3);
    }

    #[test]
    fn distinct_traces_are_all_taken_in_order() {
        let pairs: Vec<CfPair> = [(9.0, "a"), (1.0, "b"), (7.0, "c"), (8.0, "d")]
            .iter()
            .map(|(s, t)| pair(t, 0, *s))
            .collect();
        let summary = top_importance(&pairs, ImportanceMethod::LastState, 4, 5);
        let scores: Vec<f64> = summary.entries.iter().map(|e| e.score.unwrap()).collect();
        assert_eq!(scores, vec![9.0, 8.0, 7.0, 1.0]);
        summary.check().unwrap();
    }

    #[test]
    fn conflicting_origins_keep_the_higher_score() {
        let pairs = vec![pair("t", 0, 9.0), pair("t", 2, 8.0)];
        let summary = top_importance(&pairs, ImportanceMethod::LastState, 4, 5);
        assert_eq!(summary.entries.len(), 1);
        assert_eq!(summary.entries[0].pair.origin_index, 0);
    }

    #[test]
    fn degenerate_pairs_are_skipped() {
        let mut flagged = pair("t", 0, 100.0);
        flagged.degenerate = true;
        let pairs = vec![flagged, pair("u", 0, 1.0)];
        let summary = top_importance(&pairs, ImportanceMethod::LastState, 4, 5);
        assert_eq!(summary.entries.len(), 1);
        assert_eq!(summary.entries[0].pair.trace_id, "u");
    }

    #[test]
    fn ties_break_in_canonical_order() {
        let pairs = vec![pair("b", 0, 1.0), pair("a", 9, 1.0), pair("a", 0, 1.0)];
        let summary = top_importance(&pairs, ImportanceMethod::LastState, 3, 0);
        let ids: Vec<_> = summary.entries.iter().map(|e| format!("{}@{}", e.pair.trace_id, e.pair.origin_index)).collect();
        assert_eq!(ids, vec!["a@0", "a@9", "b@0"]);
    }

    #[test]
    fn frequency_selection_rules() {
        let pairs: Vec<CfPair> = (0..10).map(|i| pair("t", i * 10, 0.0)).collect();
        assert_eq!(frequency_select(&pairs, 10, 3), pairs);
        assert_eq!(frequency_select(&pairs, 50, 3), pairs);
        let a = frequency_select(&pairs, 4, 3);
        assert_eq!(a, frequency_select(&pairs, 4, 3));
        assert_eq!(a.len(), 4);
        assert!(a.windows(2).all(|w| w[0].origin_index < w[1].origin_index));
        let summary = top_importance(&pairs, ImportanceMethod::Frequency { seed: 3 }, 4, 5);
        assert!(summary.entries.iter().all(|e| e.score.is_none()));
        let mut picked: Vec<usize> = summary.entries.iter().map(|e| e.pair.origin_index).collect();
        picked.sort_unstable();
        let expected: Vec<usize> = a.iter().map(|p| p.origin_index).collect();
        assert_eq!(picked, expected);
    }

    #[test]
    fn rejoin_detection() {
        let hw = highway();
        let mut p = pair("t", 0, 0.0);
        assert!(foil_rejoins(&p));
        let mut moved = hw.reset(0);
        moved.ego.x += 1.0;
        p.foil = vec![moved; 7];
        assert!(!foil_rejoins(&p));
        assert_eq!(rejoin_fraction([&p, &pair("t", 0, 0.0)]), Some(0.5));
        assert_eq!(rejoin_fraction(core::iter::empty()), None);
    }
}
