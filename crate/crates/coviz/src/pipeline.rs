//! Pipeline stages over a run directory: train, traces, pairs, summaries.

use std::path::PathBuf;

use coviz_core::engine::{collect_traces, pairs_for_trace, record_trace};
use coviz_core::summary::{rejoin_fraction, top_importance};
use coviz_core::{
    AgentModel, CfPair, CovizConfig, Highway, ImportanceMethod, RewardWeights, ScoreMeta, Summary, Trace,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{Manifest, RunDir};
use crate::config::{RunConfig, SummaryConfig};
use crate::error::{Error, Result};
use crate::svg;

pub fn highway_for(model: &AgentModel) -> Result<Highway> {
    Ok(Highway::new(model.env.clone())?)
}

pub fn train(config: &RunConfig, agent_id: &str, weights: RewardWeights) -> Result<AgentModel> {
    let env = coviz_core::EnvConfig { weights, ..config.env.clone() };
    Ok(AgentModel::train(agent_id, env, &config.train)?)
}

/// `nsim` greedy traces, recorded in parallel, returned in seed order.
pub fn traces(model: &AgentModel, nsim: usize, base_seed: u64) -> Result<Vec<Trace>> {
    let highway = highway_for(model)?;
    if nsim < 64 {
        return Ok(collect_traces(model, &highway, nsim, base_seed)?);
    }
    (0..nsim as u64)
        .into_par_iter()
        .map(|i| record_trace(model, &highway, base_seed.wrapping_add(i)).map_err(Error::from))
        .collect()
}

/// Pairs for every trace in canonical order, plus the foil rollout steps.
pub fn pairs(model: &AgentModel, traces: &[Trace], config: &CovizConfig) -> Result<(Vec<CfPair>, usize)> {
    config.validate()?;
    let highway = highway_for(model)?;
    let per_trace: Vec<(Vec<CfPair>, usize)> = traces
        .par_iter()
        .map(|t| pairs_for_trace(model, &highway, t, config).map_err(Error::from))
        .collect::<Result<_>>()?;
    let steps = per_trace.iter().map(|(_, s)| s).sum();
    Ok((per_trace.into_iter().flat_map(|(p, _)| p).collect(), steps))
}

pub fn summarize(pairs: &[CfPair], summary: &SummaryConfig) -> Result<Summary> {
    summary.validate()?;
    Ok(top_importance(pairs, summary.importance_method()?, summary.n, summary.overlap))
}

/// Persisted summary: pair references, scores, and the configuration that
/// produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub agent_id: String,
    pub method: ImportanceMethod,
    pub n: usize,
    pub overlap: usize,
    pub coviz: CovizConfig,
    pub manifest_hash: Option<String>,
    pub entries: Vec<SummaryRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRef {
    pub rank: usize,
    pub trace_id: String,
    pub origin_index: usize,
    pub fact_action: coviz_core::Action,
    pub foil_action: coviz_core::Action,
    pub score: Option<f64>,
    pub last_state_importance: f64,
    /// API path that rebuilds this entry's payload.
    pub payload: String,
}

pub fn counterfactual_url(pair: &CfPair) -> String {
    format!(
        "/api/traces/{}/steps/{}/counterfactual?action={}&k={}",
        pair.trace_id,
        pair.origin_index,
        pair.foil_action.name(),
        pair.k()
    )
}

impl SummaryDoc {
    pub fn new(summary: &Summary, coviz: &CovizConfig, agent_id: &str) -> Self {
        SummaryDoc {
            agent_id: agent_id.into(),
            method: summary.method,
            n: summary.n,
            overlap: summary.overlap_limit,
            coviz: coviz.clone(),
            manifest_hash: summary.provenance.manifest_hash.clone(),
            entries: summary
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| SummaryRef {
                    rank: i + 1,
                    trace_id: e.pair.trace_id.clone(),
                    origin_index: e.pair.origin_index,
                    fact_action: e.pair.fact_action,
                    foil_action: e.pair.foil_action,
                    score: e.score,
                    last_state_importance: e.pair.importance.last_state,
                    payload: counterfactual_url(&e.pair),
                })
                .collect(),
        }
    }
}

/// Foil-rejoin fractions of the pairs picked by each selection method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejoinReport {
    pub agent_id: String,
    pub n: usize,
    pub overlap: usize,
    pub qdiff_pairs: usize,
    pub qdiff_rejoin: Option<f64>,
    pub last_state_pairs: usize,
    pub last_state_rejoin: Option<f64>,
}

impl RejoinReport {
    pub fn compute(agent_id: &str, pairs: &[CfPair], n: usize, overlap: usize) -> Self {
        let qdiff = top_importance(pairs, ImportanceMethod::QDiffSecondBest, n, overlap);
        let last = top_importance(pairs, ImportanceMethod::LastState, n, overlap);
        RejoinReport {
            agent_id: agent_id.into(),
            n,
            overlap,
            qdiff_pairs: qdiff.entries.len(),
            qdiff_rejoin: rejoin_fraction(qdiff.entries.iter().map(|e| &e.pair)),
            last_state_pairs: last.entries.len(),
            last_state_rejoin: rejoin_fraction(last.entries.iter().map(|e| &e.pair)),
        }
    }

    pub fn render(&self) -> String {
        let fmt = |f: Option<f64>| f.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        format!(
            "foil rejoin fraction for {} (top {} picks, overlap <= {}): qdiff {} over {} pairs, last-state {} over {} pairs",
            self.agent_id,
            self.n,
            self.overlap,
            fmt(self.qdiff_rejoin),
            self.qdiff_pairs,
            fmt(self.last_state_rejoin),
            self.last_state_pairs
        )
    }
}

/// Stages that read and write a run directory and keep its manifest current.
pub struct Runner {
    pub run: RunDir,
    pub config: RunConfig,
    pub manifest: Manifest,
}

impl Runner {
    pub fn open(run: RunDir, config: RunConfig) -> Result<Self> {
        let manifest = run.manifest()?;
        Ok(Runner { run, config, manifest })
    }

    pub fn finish(&mut self) -> Result<String> {
        self.manifest.config = Some(self.config.clone());
        self.run.save_manifest(&self.manifest)
    }

    pub fn train(&mut self, agent_id: &str, weights: RewardWeights) -> Result<AgentModel> {
        let model = train(&self.config, agent_id, weights)?;
        self.run.save_agent(&mut self.manifest, &model)?;
        self.manifest.seeds.insert(format!("train/{agent_id}"), self.config.train.seed);
        Ok(model)
    }

    pub fn traces(&mut self, model: &AgentModel) -> Result<Vec<Trace>> {
        let traces = traces(model, self.config.coviz.nsim, self.config.coviz.seed)?;
        self.run.save_traces(&mut self.manifest, &model.id, self.config.coviz.seed, &traces)?;
        self.manifest.seeds.insert(format!("traces/{}", model.id), self.config.coviz.seed);
        Ok(traces)
    }

    /// Stored traces, recording them first when absent.
    pub fn ensure_traces(&mut self, model: &AgentModel) -> Result<Vec<Trace>> {
        if self.run.has_traces(&model.id) {
            self.run.load_traces(&model.id)
        } else {
            self.traces(model)
        }
    }

    pub fn pairs(&mut self, model: &AgentModel, traces: &[Trace]) -> Result<Vec<CfPair>> {
        let (pairs, steps) = pairs(model, traces, &self.config.coviz)?;
        log::info!("{}: {} pairs from {} traces, {steps} foil steps", model.id, pairs.len(), traces.len());
        self.run.save_pairs(&mut self.manifest, &model.id, &pairs)?;
        Ok(pairs)
    }

    /// Stored pairs, generating traces and pairs first when absent.
    pub fn ensure_pairs(&mut self, model: &AgentModel) -> Result<(Vec<Trace>, Vec<CfPair>)> {
        let traces = self.ensure_traces(model)?;
        let pairs = if self.run.has_pairs(&model.id) {
            self.run.load_pairs(&model.id, &traces)?
        } else {
            self.pairs(model, &traces)?
        };
        Ok((traces, pairs))
    }

    pub fn summary_dir(&self, agent_id: &str, method: ImportanceMethod) -> PathBuf {
        self.run.root().join("summaries").join(agent_id).join(method.name())
    }

    /// Writes `summary.json` plus one payload directory (JSON and SVGs) per
    /// entry.
    pub fn summarize(&mut self, model: &AgentModel, pairs: &[CfPair]) -> Result<SummaryDoc> {
        let mut summary = summarize(pairs, &self.config.summary)?;
        summary.provenance.agent_id = model.id.clone();
        summary.provenance.manifest_hash = Some(self.manifest.hash());
        let doc = SummaryDoc::new(&summary, &self.config.coviz, &model.id);
        let dir = self.summary_dir(&model.id, summary.method);
        let highway = highway_for(model)?;
        for (rank, entry) in summary.entries.iter().enumerate() {
            let meta = ScoreMeta { method: Some(summary.method), score: entry.score };
            let payload = coviz_core::explain::build_cord_payload(model, &highway, &entry.pair, meta)?;
            let entry_dir = dir.join(format!("entry_{:02}", rank + 1));
            self.write_payload(&entry_dir, &payload)?;
        }
        let bytes = serde_json::to_vec_pretty(&doc).expect("summary serializes");
        self.run.write_artifact(&mut self.manifest, &dir.join("summary.json"), &bytes)?;
        if let ImportanceMethod::Frequency { seed } = summary.method {
            self.manifest.seeds.insert(format!("summary/{}/frequency", model.id), seed);
        }
        Ok(doc)
    }

    pub fn write_payload(&mut self, dir: &std::path::Path, payload: &coviz_core::CordPayload) -> Result<()> {
        let json = serde_json::to_vec_pretty(payload).expect("payload serializes");
        self.run.write_artifact(&mut self.manifest, &dir.join("payload.json"), &json)?;
        for (name, text) in svg::payload_svgs(payload) {
            self.run.write_artifact(&mut self.manifest, &dir.join(name), text.as_bytes())?;
        }
        Ok(())
    }

    pub fn rejoin_report(&mut self, model: &AgentModel, pairs: &[CfPair]) -> Result<RejoinReport> {
        let report = RejoinReport::compute(&model.id, pairs, self.config.summary.n, self.config.summary.overlap);
        let path = self.run.root().join("reports").join(format!("rejoin-{}.json", model.id));
        let bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
        self.run.write_artifact(&mut self.manifest, &path, &bytes)?;
        Ok(report)
    }
}
