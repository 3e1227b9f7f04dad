//! On-disk formats for a run directory.
//!
//! ```text
//! <run>/manifest.json                 config, seeds, sha256 of every artifact
//! <run>/agents/<agent>.json           versioned checkpoint
//! <run>/traces/<agent>/index.json     per-trace metadata and final state
//! <run>/traces/<agent>/<trace>.jsonl  one step per line
//! <run>/pairs/<agent>.jsonl           one pair per line, facts by reference
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use coviz_core::agent::{AgentModel, CollisionFolding, Component, DecomposedQ, TrainingMeta};
use coviz_core::engine::{CfMethod, CfPair, TerminalCause, Trace, TraceStep};
use coviz_core::summary::ImportanceScores;
use coviz_core::{Action, EnvConfig, Observation, SimState};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CheckpointError, Error, Result};

pub const CHECKPOINT_FORMAT: &str = "coviz-agent";
pub const CHECKPOINT_VERSION: u64 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    bytes
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json { path: path.to_path_buf(), source })?);
    }
    Ok(out)
}

fn json_lines<T: Serialize>(items: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("artifact serializes");
        out.push(b'\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    id: String,
    gamma: f64,
    alpha: f64,
    fold_collision: CollisionFolding,
    env: EnvConfig,
    training: Option<TrainingMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u64,
    metadata: CheckpointMeta,
    /// component key -> observation key -> 5 Q-values.
    components: BTreeMap<String, BTreeMap<String, [f64; Action::COUNT]>>,
}

pub fn checkpoint_bytes(model: &AgentModel) -> Vec<u8> {
    let mut components: BTreeMap<String, BTreeMap<String, [f64; Action::COUNT]>> = BTreeMap::new();
    for component in Component::ALL {
        let head = model
            .table
            .iter()
            .map(|(obs, q)| (obs.to_string(), q.values[component as usize]))
            .collect();
        components.insert(component.key().to_string(), head);
    }
    let doc = CheckpointDoc {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        metadata: CheckpointMeta {
            id: model.id.clone(),
            gamma: model.gamma,
            alpha: model.alpha,
            fold_collision: model.fold_collision,
            env: model.env.clone(),
            training: model.meta.clone(),
        },
        components,
    };
    to_json_pretty(&doc)
}

pub fn save_agent(model: &AgentModel, path: &Path) -> Result<String> {
    let bytes = checkpoint_bytes(model);
    write_bytes(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<AgentModel, CheckpointError> {
    let malformed = |reason: String| CheckpointError::Malformed { path: path.to_path_buf(), reason };
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| malformed(e.to_string()))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(malformed(format!("missing `format: {CHECKPOINT_FORMAT}` marker")));
    }
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| malformed("missing version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    doc.metadata.env.validate().map_err(|e| malformed(e.to_string()))?;

    let mut model = AgentModel {
        id: doc.metadata.id,
        table: Default::default(),
        gamma: doc.metadata.gamma,
        alpha: doc.metadata.alpha,
        fold_collision: doc.metadata.fold_collision,
        env: doc.metadata.env,
        meta: doc.metadata.training,
    };
    let mut rows: BTreeMap<Observation, DecomposedQ> = BTreeMap::new();
    for (key, head) in &doc.components {
        let component = Component::ALL
            .into_iter()
            .find(|c| c.key() == key)
            .ok_or_else(|| malformed(format!("unknown component `{key}`")))?;
        for (obs_key, values) in head {
            let obs: Observation = obs_key.parse().map_err(|e: coviz_core::Error| malformed(e.to_string()))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(malformed(format!("non-finite Q-value at {key}/{obs_key}")));
            }
            rows.entry(obs).or_default().values[component as usize] = *values;
        }
    }
    for (obs, q) in rows {
        model.table.insert(obs, q);
    }
    Ok(model)
}

pub fn load_agent(path: &Path) -> Result<AgentModel, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CheckpointError::Missing(path.to_path_buf()),
        _ => CheckpointError::Io { path: path.to_path_buf(), source: e },
    })?;
    parse_checkpoint(&bytes, path)
}

// ---------------------------------------------------------------------------
// Traces

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub id: String,
    pub seed: u64,
    pub agent_id: String,
    pub len: usize,
    pub terminal: TerminalCause,
    pub final_state: SimState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceIndex {
    pub agent_id: String,
    pub base_seed: u64,
    pub traces: Vec<TraceMeta>,
}

pub fn trace_lines(trace: &Trace) -> Vec<u8> {
    json_lines(&trace.steps)
}

// ---------------------------------------------------------------------------
// Pairs

/// A pair as stored on disk: the origin and fact states are read back from
/// the referenced trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub trace_id: String,
    pub agent_id: String,
    pub origin_index: usize,
    pub k: usize,
    pub fact_action: Action,
    pub foil_action: Action,
    pub cf_method: CfMethod,
    pub foil: Vec<SimState>,
    pub foil_terminal: Option<TerminalCause>,
    pub degenerate: bool,
    pub importance: ImportanceScores,
}

impl PairRecord {
    pub fn from_pair(pair: &CfPair) -> Self {
        PairRecord {
            trace_id: pair.trace_id.clone(),
            agent_id: pair.agent_id.clone(),
            origin_index: pair.origin_index,
            k: pair.k(),
            fact_action: pair.fact_action,
            foil_action: pair.foil_action,
            cf_method: pair.cf_method,
            foil: pair.foil.clone(),
            foil_terminal: pair.foil_terminal,
            degenerate: pair.degenerate,
            importance: pair.importance,
        }
    }

    pub fn hydrate(self, trace: &Trace) -> Result<CfPair> {
        let i = self.origin_index;
        if trace.id != self.trace_id || !trace.is_eligible(i, self.k) {
            return Err(Error::Store(format!(
                "pair {}@{} does not fit trace {} ({} steps)",
                self.trace_id,
                i,
                trace.id,
                trace.len()
            )));
        }
        let step = &trace.steps[i];
        if step.action != self.fact_action {
            return Err(Error::Store(format!("pair {}@{} disagrees with its trace action", self.trace_id, i)));
        }
        Ok(CfPair {
            trace_id: self.trace_id,
            agent_id: self.agent_id,
            origin_index: i,
            origin: step.snapshot.clone(),
            fact_action: self.fact_action,
            origin_q: step.q,
            fact: trace.steps[i + 1..=i + self.k].iter().map(|s| s.snapshot.clone()).collect(),
            foil: self.foil,
            foil_action: self.foil_action,
            cf_method: self.cf_method,
            foil_terminal: self.foil_terminal,
            degenerate: self.degenerate,
            importance: self.importance,
        })
    }
}

pub fn pair_lines(pairs: &[CfPair]) -> Vec<u8> {
    json_lines(pairs.iter().map(PairRecord::from_pair))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: Option<RunConfig>,
    /// Named seeds, e.g. `train/agent1`, `traces/agent1`.
    pub seeds: BTreeMap<String, u64>,
    /// Relative path -> sha256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            ..Manifest::default()
        }
    }

    pub fn bytes(&self) -> Vec<u8> {
        to_json_pretty(self)
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.bytes())
    }
}

/// Handle on a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn agent_path(&self, agent_id: &str) -> PathBuf {
        self.root.join("agents").join(format!("{agent_id}.json"))
    }

    pub fn trace_dir(&self, agent_id: &str) -> PathBuf {
        self.root.join("traces").join(agent_id)
    }

    pub fn pairs_path(&self, agent_id: &str) -> PathBuf {
        self.root.join("pairs").join(format!("{agent_id}.jsonl"))
    }

    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(Manifest::new());
        }
        read_json(&path)
    }

    pub fn has_manifest(&self) -> bool {
        self.manifest_path().exists()
    }

    pub fn save_manifest(&self, manifest: &Manifest) -> Result<String> {
        let bytes = manifest.bytes();
        write_bytes(&self.manifest_path(), &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    /// Writes `bytes` and records its hash in `manifest`.
    pub fn write_artifact(&self, manifest: &mut Manifest, path: &Path, bytes: &[u8]) -> Result<()> {
        write_bytes(path, bytes)?;
        manifest.artifacts.insert(self.relative(path), sha256_hex(bytes));
        Ok(())
    }

    /// Every listed artifact exists with the recorded hash.
    pub fn verify(&self, manifest: &Manifest) -> Result<()> {
        for (rel, expected) in &manifest.artifacts {
            let path = self.root.join(rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let actual = sha256_hex(&bytes);
            if &actual != expected {
                return Err(Error::Store(format!("{rel}: hash {actual} does not match manifest {expected}")));
            }
        }
        Ok(())
    }

    pub fn agent_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("agents");
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(stem) = path.file_stem() {
                    ids.push(stem.to_string_lossy().into_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn load_agent(&self, agent_id: &str) -> Result<AgentModel> {
        Ok(load_agent(&self.agent_path(agent_id))?)
    }

    pub fn save_agent(&self, manifest: &mut Manifest, model: &AgentModel) -> Result<()> {
        let path = self.agent_path(&model.id);
        self.write_artifact(manifest, &path, &checkpoint_bytes(model))
    }

    pub fn has_traces(&self, agent_id: &str) -> bool {
        self.trace_dir(agent_id).join("index.json").exists()
    }

    pub fn save_traces(&self, manifest: &mut Manifest, agent_id: &str, base_seed: u64, traces: &[Trace]) -> Result<()> {
        let dir = self.trace_dir(agent_id);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let prefix = format!("{}/", self.relative(&dir));
            manifest.artifacts.retain(|k, _| !k.starts_with(&prefix));
        }
        for trace in traces {
            let path = dir.join(format!("{}.jsonl", trace.id));
            self.write_artifact(manifest, &path, &trace_lines(trace))?;
        }
        let index = TraceIndex {
            agent_id: agent_id.into(),
            base_seed,
            traces: traces
                .iter()
                .map(|t| TraceMeta {
                    id: t.id.clone(),
                    seed: t.seed,
                    agent_id: t.agent_id.clone(),
                    len: t.len(),
                    terminal: t.terminal,
                    final_state: t.final_state.clone(),
                })
                .collect(),
        };
        self.write_artifact(manifest, &dir.join("index.json"), &to_json_pretty(&index))
    }

    pub fn load_traces(&self, agent_id: &str) -> Result<Vec<Trace>> {
        let dir = self.trace_dir(agent_id);
        let index: TraceIndex = read_json(&dir.join("index.json"))?;
        let mut traces = Vec::with_capacity(index.traces.len());
        for meta in index.traces {
            let path = dir.join(format!("{}.jsonl", meta.id));
            let steps: Vec<TraceStep> = read_json_lines(&path)?;
            if steps.len() != meta.len {
                return Err(Error::Store(format!(
                    "{}: {} steps on disk, index says {}",
                    path.display(),
                    steps.len(),
                    meta.len
                )));
            }
            traces.push(Trace {
                id: meta.id,
                seed: meta.seed,
                agent_id: meta.agent_id,
                steps,
                final_state: meta.final_state,
                terminal: meta.terminal,
            });
        }
        Ok(traces)
    }

    pub fn has_pairs(&self, agent_id: &str) -> bool {
        self.pairs_path(agent_id).exists()
    }

    pub fn save_pairs(&self, manifest: &mut Manifest, agent_id: &str, pairs: &[CfPair]) -> Result<()> {
        self.write_artifact(manifest, &self.pairs_path(agent_id), &pair_lines(pairs))
    }

    pub fn load_pairs(&self, agent_id: &str, traces: &[Trace]) -> Result<Vec<CfPair>> {
        let records: Vec<PairRecord> = read_json_lines(&self.pairs_path(agent_id))?;
        let by_id: BTreeMap<&str, &Trace> = traces.iter().map(|t| (t.id.as_str(), t)).collect();
        records
            .into_iter()
            .map(|r| {
                let trace = by_id
                    .get(r.trace_id.as_str())
                    .ok_or_else(|| Error::Store(format!("pair references unknown trace {}", r.trace_id)))?;
                r.hydrate(trace)
            })
            .collect()
    }
}
