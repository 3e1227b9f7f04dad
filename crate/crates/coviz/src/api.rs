//! Read-only HTTP facade over a run directory, plus on-demand counterfactual
//! rollouts.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use coviz_core::engine::{pair_at, select_cf_action};
use coviz_core::explain::build_cord_payload;
use coviz_core::{
    Action, AgentModel, CfMethod, CfPair, CovizConfig, DecomposedQ, Highway, Observation, RewardVector,
    RewardWeights, ScoreMeta, SimState, Trace, TrainingMeta,
};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::artifacts::RunDir;
use crate::config::SummaryConfig;
use crate::error::{Error, Result};
use crate::pipeline::{self, SummaryDoc};

pub struct AgentEntry {
    pub model: AgentModel,
    pub highway: Highway,
    pub traces: Vec<Trace>,
    pub pairs: Vec<CfPair>,
}

/// Everything the service answers from, loaded once and never mutated.
pub struct ArtifactStore {
    pub root: PathBuf,
    pub agents: BTreeMap<String, AgentEntry>,
    /// trace id -> (agent id, index into that agent's traces).
    pub traces: BTreeMap<String, (String, usize)>,
    pub coviz: CovizConfig,
    pub manifest_hash: Option<String>,
}

impl ArtifactStore {
    pub fn empty() -> Self {
        ArtifactStore {
            root: PathBuf::new(),
            agents: BTreeMap::new(),
            traces: BTreeMap::new(),
            coviz: CovizConfig::default(),
            manifest_hash: None,
        }
    }

    /// Loads every agent under `root`. An empty directory gives an empty
    /// store; anything unreadable or inconsistent is an error.
    pub fn load(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Store(format!("{} is not a directory", root.display())));
        }
        let run = RunDir::new(root);
        let (coviz, manifest_hash) = if run.has_manifest() {
            let manifest = run.manifest()?;
            run.verify(&manifest)?;
            let coviz = manifest.config.as_ref().map(|c| c.coviz.clone()).unwrap_or_default();
            (coviz, Some(manifest.hash()))
        } else {
            (CovizConfig::default(), None)
        };
        let mut store = ArtifactStore { root: root.to_path_buf(), coviz, manifest_hash, ..ArtifactStore::empty() };
        for id in run.agent_ids()? {
            let model = run.load_agent(&id)?;
            if model.id != id {
                return Err(Error::Store(format!("agents/{id}.json holds agent `{}`", model.id)));
            }
            let highway = pipeline::highway_for(&model)?;
            let traces = if run.has_traces(&id) { run.load_traces(&id)? } else { Vec::new() };
            let pairs = if run.has_pairs(&id) { run.load_pairs(&id, &traces)? } else { Vec::new() };
            for (i, trace) in traces.iter().enumerate() {
                if store.traces.insert(trace.id.clone(), (id.clone(), i)).is_some() {
                    return Err(Error::Store(format!("duplicate trace id {}", trace.id)));
                }
            }
            store.agents.insert(id, AgentEntry { model, highway, traces, pairs });
        }
        Ok(store)
    }

    pub fn trace(&self, trace_id: &str) -> Option<(&AgentEntry, &Trace)> {
        let (agent, i) = self.traces.get(trace_id)?;
        let entry = &self.agents[agent];
        Some((entry, &entry.traces[*i]))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, message)
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<coviz_core::Error> for ApiError {
    fn from(e: coviz_core::Error) -> Self {
        use coviz_core::Error as E;
        let status = match e {
            E::InvalidFoil { .. } | E::Config(_) | E::Usage(_) => StatusCode::BAD_REQUEST,
            E::Ineligible { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            E::AgentMismatch { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(core) => core.into(),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    status: u16,
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { status: self.status.as_u16(), error: &self.message };
        (self.status, json_bytes(&body)).into_response()
    }
}

struct Json(Vec<u8>);

impl IntoResponse for Json {
    fn into_response(self) -> Response {
        ([(header::CONTENT_TYPE, "application/json")], self.0).into_response()
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Json {
    Json(serde_json::to_vec(value).expect("response serializes"))
}

type ApiResult = std::result::Result<Json, ApiError>;

/// (agent, method, n, overlap, seed)
type SummaryKey = (String, String, usize, usize, u64);

#[derive(Default)]
struct SummaryCache {
    entries: RwLock<HashMap<SummaryKey, Arc<Vec<u8>>>>,
}

#[derive(Clone)]
pub struct AppState {
    store: Arc<ArtifactStore>,
    summaries: Arc<SummaryCache>,
}

impl AppState {
    pub fn new(store: ArtifactStore) -> Self {
        AppState { store: Arc::new(store), summaries: Arc::default() }
    }
}

#[derive(Serialize)]
struct AgentInfo<'a> {
    id: &'a str,
    weights: RewardWeights,
    gamma: f64,
    alpha: f64,
    states: usize,
    training: Option<&'a TrainingMeta>,
    traces: usize,
    pairs: usize,
}

async fn agents(State(app): State<AppState>) -> ApiResult {
    let list: Vec<AgentInfo> = app
        .store
        .agents
        .values()
        .map(|e| AgentInfo {
            id: &e.model.id,
            weights: e.model.weights(),
            gamma: e.model.gamma,
            alpha: e.model.alpha,
            states: e.model.table.len(),
            training: e.model.meta.as_ref(),
            traces: e.traces.len(),
            pairs: e.pairs.len(),
        })
        .collect();
    Ok(json_bytes(&list))
}

#[derive(Serialize)]
struct TraceInfo<'a> {
    id: &'a str,
    seed: u64,
    len: usize,
    terminal: coviz_core::TerminalCause,
    actions: Vec<Action>,
}

async fn agent_traces(State(app): State<AppState>, UrlPath(agent): UrlPath<String>) -> ApiResult {
    let entry = app
        .store
        .agents
        .get(&agent)
        .ok_or_else(|| ApiError::not_found(format!("unknown agent `{agent}`")))?;
    let list: Vec<TraceInfo> = entry
        .traces
        .iter()
        .map(|t| TraceInfo { id: &t.id, seed: t.seed, len: t.len(), terminal: t.terminal, actions: t.actions() })
        .collect();
    Ok(json_bytes(&list))
}

#[derive(Deserialize)]
struct StepQuery {
    k: Option<usize>,
}

#[derive(Serialize)]
struct StepDetail<'a> {
    agent_id: &'a str,
    trace_id: &'a str,
    index: usize,
    trace_len: usize,
    obs: Observation,
    obs_key: String,
    action: Action,
    second_best: Action,
    q: DecomposedQ,
    totals: [f64; Action::COUNT],
    reward: RewardVector,
    terminated: bool,
    k: usize,
    eligible: bool,
    snapshot: &'a SimState,
}

fn lookup_step<'a>(
    store: &'a ArtifactStore,
    tid: &str,
    i: &str,
) -> std::result::Result<(&'a AgentEntry, &'a Trace, usize), ApiError> {
    let i: usize = i.parse().map_err(|_| ApiError::not_found(format!("no step `{i}`")))?;
    let (entry, trace) = store.trace(tid).ok_or_else(|| ApiError::not_found(format!("unknown trace `{tid}`")))?;
    if i >= trace.len() {
        return Err(ApiError::not_found(format!("trace `{tid}` has {} steps, no step {i}", trace.len())));
    }
    Ok((entry, trace, i))
}

async fn step(
    State(app): State<AppState>,
    UrlPath((tid, i)): UrlPath<(String, String)>,
    Query(query): Query<StepQuery>,
) -> ApiResult {
    let (entry, trace, i) = lookup_step(&app.store, &tid, &i)?;
    let step = &trace.steps[i];
    let k = query.k.unwrap_or(app.store.coviz.k);
    Ok(json_bytes(&StepDetail {
        agent_id: &entry.model.id,
        trace_id: &trace.id,
        index: i,
        trace_len: trace.len(),
        obs: step.obs,
        obs_key: step.obs.to_string(),
        action: step.action,
        second_best: step.q.ranked_actions()[1],
        q: step.q,
        totals: step.q.totals(),
        reward: step.reward,
        terminated: step.terminated,
        k,
        eligible: k >= 1 && trace.is_eligible(i, k),
        snapshot: &step.snapshot,
    }))
}

#[derive(Deserialize)]
struct CounterfactualQuery {
    action: Option<String>,
    k: Option<usize>,
}

async fn counterfactual(
    State(app): State<AppState>,
    UrlPath((tid, i)): UrlPath<(String, String)>,
    Query(query): Query<CounterfactualQuery>,
) -> ApiResult {
    let (entry, trace, i) = lookup_step(&app.store, &tid, &i)?;
    let k = query.k.unwrap_or(app.store.coviz.k);
    let step = &trace.steps[i];
    let (foil, method) = match query.action.as_deref() {
        None | Some("auto") => {
            (select_cf_action(&step.q, step.action, CfMethod::SecondBest)?, CfMethod::SecondBest)
        }
        Some(text) => {
            let action: Action = text.parse().map_err(|e: coviz_core::Error| ApiError::bad_request(e.to_string()))?;
            (action, CfMethod::UserChosen(action))
        }
    };
    let pair = pair_at(&entry.model, &entry.highway, trace, i, foil, method, k)?;
    let meta = ScoreMeta::default();
    Ok(json_bytes(&build_cord_payload(&entry.model, &entry.highway, &pair, meta)?))
}

#[derive(Deserialize)]
struct SummaryQuery {
    agent: String,
    method: Option<String>,
    n: Option<usize>,
    overlap: Option<usize>,
    seed: Option<u64>,
}

async fn summary(State(app): State<AppState>, Query(query): Query<SummaryQuery>) -> std::result::Result<Json, ApiError> {
    let defaults = SummaryConfig::default();
    let config = SummaryConfig {
        method: query.method.unwrap_or(defaults.method),
        n: query.n.unwrap_or(defaults.n),
        overlap: query.overlap.unwrap_or(defaults.overlap),
        seed: query.seed.unwrap_or(defaults.seed),
    };
    let entry = app
        .store
        .agents
        .get(&query.agent)
        .ok_or_else(|| ApiError::not_found(format!("unknown agent `{}`", query.agent)))?;
    config.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let key = (query.agent.clone(), config.method.clone(), config.n, config.overlap, config.seed);
    if let Some(hit) = app.summaries.entries.read().expect("cache lock").get(&key) {
        return Ok(Json(hit.as_ref().clone()));
    }
    if entry.pairs.is_empty() {
        return Err(ApiError::not_found(format!("no counterfactual pairs stored for `{}`", query.agent)));
    }
    let mut summary = pipeline::summarize(&entry.pairs, &config)?;
    summary.provenance.agent_id = entry.model.id.clone();
    summary.provenance.manifest_hash = app.store.manifest_hash.clone();
    let coviz = CovizConfig { k: entry.pairs[0].k(), ..app.store.coviz.clone() };
    let body = serde_json::to_vec(&SummaryDoc::new(&summary, &coviz, &entry.model.id)).expect("summary serializes");
    app.summaries.entries.write().expect("cache lock").insert(key, Arc::new(body.clone()));
    Ok(Json(body))
}

async fn openapi() -> Json {
    json_bytes(&openapi_document())
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn openapi_document() -> serde_json::Value {
    use serde_json::json;
    let id = |name: &str| json!({"name": name, "in": "path", "required": true, "schema": {"type": "string"}});
    let index = json!({"name": "i", "in": "path", "required": true, "schema": {"type": "integer", "minimum": 0}});
    let k = json!({"name": "k", "in": "query", "schema": {"type": "integer", "minimum": 1, "default": 7}});
    json!({
        "openapi": "3.0.3",
        "info": {"title": "coviz", "version": env!("CARGO_PKG_VERSION")},
        "paths": {
            "/api/agents": {"get": {
                "summary": "Loaded agents with reward weights and training metadata",
                "responses": {"200": {"description": "agent list"}}
            }},
            "/api/agents/{agent}/traces": {"get": {
                "summary": "Traces recorded for an agent",
                "parameters": [id("agent")],
                "responses": {"200": {"description": "trace list"}, "404": {"description": "unknown agent"}}
            }},
            "/api/traces/{tid}/steps/{i}": {"get": {
                "summary": "Observation, action, decomposed Q-values and pairing eligibility of one step",
                "parameters": [id("tid"), index, k],
                "responses": {"200": {"description": "step detail"}, "404": {"description": "unknown trace or step"}}
            }},
            "/api/traces/{tid}/steps/{i}/counterfactual": {"get": {
                "summary": "Fresh counterfactual rollout from a stored state, as a CORD payload",
                "parameters": [id("tid"), index, k,
                    {"name": "action", "in": "query", "schema": {"type": "string",
                        "enum": ["auto", "lane-left", "idle", "lane-right", "faster", "slower"], "default": "auto"}}],
                "responses": {
                    "200": {"description": "payload with frames, bars and last-state importance"},
                    "400": {"description": "foil equals the fact action, or malformed action"},
                    "404": {"description": "unknown trace or step"},
                    "422": {"description": "fewer than k steps follow the origin"}
                }
            }},
            "/api/summary": {"get": {
                "summary": "Top-n counterfactual pairs for an agent",
                "parameters": [
                    {"name": "agent", "in": "query", "required": true, "schema": {"type": "string"}},
                    {"name": "method", "in": "query", "schema": {"type": "string",
                        "enum": ["last-state", "qdiff-second", "qdiff-worst", "frequency"], "default": "last-state"}},
                    {"name": "n", "in": "query", "schema": {"type": "integer", "minimum": 1, "default": 4}},
                    {"name": "overlap", "in": "query", "schema": {"type": "integer", "minimum": 0, "default": 5}},
                    {"name": "seed", "in": "query", "schema": {"type": "integer", "default": 0}}
                ],
                "responses": {"200": {"description": "summary"}, "400": {"description": "bad parameters"},
                    "404": {"description": "unknown agent or no pairs"}}
            }},
            "/api/spec": {"get": {"summary": "This document", "responses": {"200": {"description": "OpenAPI"}}}}
        }
    })
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/agents", get(agents))
        .route("/api/agents/{agent}/traces", get(agent_traces))
        .route("/api/traces/{tid}/steps/{i}", get(step))
        .route("/api/traces/{tid}/steps/{i}/counterfactual", get(counterfactual))
        .route("/api/summary", get(summary))
        .route("/api/spec", get(openapi));
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(fallback),
    };
    app.with_state(state).layer(CorsLayer::permissive())
}
