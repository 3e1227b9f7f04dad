//! Command-line front end. Exit codes: 0 ok, 2 usage or configuration,
//! 3 data or eligibility, 4 environment.

use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use coviz_core::engine::{pair_at, select_cf_action};
use coviz_core::explain::build_cord_payload;
use coviz_core::{Action, AgentProfile, CfMethod, CfPair, ImportanceMethod, RewardWeights, ScoreMeta};

use crate::api::{self, AppState, ArtifactStore};
use crate::artifacts::RunDir;
use crate::config::RunConfig;
use crate::error::Error;
use crate::pipeline::{self, Runner, SummaryDoc};
use crate::svg;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_ENV: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "coviz", version, about = "Counterfactual outcome explanations for highway driving agents")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration with [env], [train], [coviz], [summary].
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory holding every artifact and the manifest.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a decomposed agent and write its checkpoint.
    Train {
        /// agent1, agent2, agent3 or custom.
        #[arg(long)]
        profile: String,
        /// Agent id; defaults to the profile name.
        #[arg(long)]
        id: Option<String>,
        /// Weights `cl,hs,rml,col` for `--profile custom`; the config's
        /// [env.weights] are used otherwise.
        #[arg(long, allow_hyphen_values = true)]
        weights: Option<String>,
        #[arg(long)]
        episodes: Option<u32>,
    },
    /// Record greedy traces for a trained agent.
    Trace {
        #[arg(long)]
        agent: String,
        #[arg(long)]
        nsim: Option<usize>,
    },
    /// Generate counterfactual pairs for every eligible trace state.
    Pairs {
        #[arg(long)]
        agent: String,
        #[arg(long)]
        k: Option<usize>,
        /// second-best or worst.
        #[arg(long)]
        cf_method: Option<String>,
    },
    /// Explain one trace state: prints its payload as JSON.
    Explain {
        #[arg(long)]
        agent: String,
        #[arg(long)]
        trace: String,
        #[arg(long)]
        step: usize,
        /// `auto` (second-best) or an action name.
        #[arg(long, default_value = "auto")]
        foil: String,
        #[arg(long)]
        k: Option<usize>,
        /// Also write SVG frames and bars into this directory.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Write the payload here instead of stdout.
        #[arg(long)]
        payload: Option<PathBuf>,
    },
    /// Select the top pairs and write the summary with payloads and SVGs.
    Summarize {
        #[arg(long)]
        agent: String,
        /// last-state, qdiff-second, qdiff-worst or frequency.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Render SVGs for one stored pair, or re-render a written summary.
    Render {
        #[arg(long)]
        agent: String,
        #[arg(long, requires = "step")]
        trace: Option<String>,
        #[arg(long, requires = "trace")]
        step: Option<usize>,
        /// Summary to re-render when no pair is given.
        #[arg(long)]
        method: Option<String>,
    },
    /// Serve the run directory over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Static files (the explorer build) served next to the API.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: EXIT_DATA, message: message.into() }
    }
}

pub fn exit_code(error: &Error) -> u8 {
    use coviz_core::Error as E;
    match error {
        Error::Core(E::Config(_) | E::Usage(_) | E::InvalidFoil { .. }) | Error::ConfigFile { .. } => EXIT_USAGE,
        Error::Core(E::Ineligible { .. } | E::AgentMismatch { .. }) => EXIT_DATA,
        Error::Io { .. } | Error::Json { .. } | Error::Checkpoint(_) | Error::Store(_) | Error::NotFound(_) => {
            EXIT_DATA
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: exit_code(&e), message: e.to_string() }
    }
}

impl From<coviz_core::Error> for Failure {
    fn from(e: coviz_core::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let config = RunConfig::load_or_default(common.config.as_deref()).map_err(|e| Failure::usage(e.to_string()))?;
    Ok(config)
}

fn validated(config: RunConfig) -> CliResult<RunConfig> {
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(config)
}

fn parse_weights(text: &str) -> CliResult<RewardWeights> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::usage(format!("malformed weights `{text}`, expected cl,hs,rml,col")))?;
    match values.as_slice() {
        [cl, hs, rml, col] if values.iter().all(|v| v.is_finite()) => Ok(RewardWeights::new(*cl, *hs, *rml, *col)),
        _ => Err(Failure::usage(format!("malformed weights `{text}`, expected four finite numbers"))),
    }
}

fn parse_cf_method(text: &str) -> CliResult<CfMethod> {
    match text {
        "second-best" | "secondbest" => Ok(CfMethod::SecondBest),
        "worst" => Ok(CfMethod::Worst),
        other => Err(Failure::usage(format!("unknown cf method `{other}` (expected second-best or worst)"))),
    }
}

fn parse_method(config: &RunConfig, name: Option<&str>) -> CliResult<ImportanceMethod> {
    let name = name.unwrap_or(&config.summary.method);
    ImportanceMethod::parse(name, config.summary.seed).ok_or_else(|| {
        Failure::usage(format!(
            "unknown importance method `{name}` (expected last-state, qdiff-second, qdiff-worst, frequency)"
        ))
    })
}

fn require_agent(run: &RunDir, agent: &str) -> CliResult<coviz_core::AgentModel> {
    run.load_agent(agent).map_err(|e| Failure::data(format!("cannot load agent `{agent}`: {e}")))
}

pub fn run(cli: Cli) -> CliResult {
    let mut config = load_config(&cli.common)?;
    let run = RunDir::new(&cli.common.out);
    let seed = cli.common.seed;
    match cli.command {
        Command::Train { profile, id, weights, episodes } => {
            if let Some(s) = seed {
                config.train.seed = s;
            }
            if let Some(e) = episodes {
                config.train.episodes = e;
            }
            let config = validated(config)?;
            let weights = match (profile.as_str(), weights) {
                ("custom", Some(text)) => parse_weights(&text)?,
                ("custom", None) => config.env.weights,
                (name, extra) => match AgentProfile::parse(name) {
                    Some(_) if extra.is_some() => return Err(Failure::usage("--weights requires --profile custom")),
                    Some(p) => p.weights(),
                    None => {
                        return Err(Failure::usage(format!(
                            "unknown profile `{name}` (expected agent1, agent2, agent3 or custom)"
                        )))
                    }
                },
            };
            let id = id.unwrap_or(profile);
            check_id(&id)?;
            let mut runner = Runner::open(run, config)?;
            let model = runner.train(&id, weights)?;
            runner.finish()?;
            log::info!("trained {id}: {} states visited", model.table.len());
        }
        Command::Trace { agent, nsim } => {
            if let Some(s) = seed {
                config.coviz.seed = s;
            }
            if let Some(n) = nsim {
                config.coviz.nsim = n;
            }
            let config = validated(config)?;
            let model = require_agent(&run, &agent)?;
            let mut runner = Runner::open(run, config)?;
            let traces = runner.traces(&model)?;
            runner.finish()?;
            log::info!("{agent}: recorded {} traces", traces.len());
        }
        Command::Pairs { agent, k, cf_method } => {
            if let Some(s) = seed {
                config.coviz.seed = s;
            }
            if let Some(k) = k {
                config.coviz.k = k;
            }
            if let Some(m) = cf_method {
                config.coviz.cf_method = parse_cf_method(&m)?;
            }
            let config = validated(config)?;
            let model = require_agent(&run, &agent)?;
            let mut runner = Runner::open(run, config)?;
            let traces = runner.ensure_traces(&model)?;
            runner.pairs(&model, &traces)?;
            runner.finish()?;
        }
        Command::Explain { agent, trace, step, foil, k, svg: svg_dir, payload } => {
            let config = validated(config)?;
            let k = k.unwrap_or(config.coviz.k);
            let requested = match foil.as_str() {
                "auto" => None,
                text => Some(text.parse::<Action>().map_err(|e| Failure::usage(e.to_string()))?),
            };
            let model = require_agent(&run, &agent)?;
            if !run.has_traces(&agent) {
                return Err(Failure::data(format!("no traces recorded for `{agent}`; run `coviz trace` first")));
            }
            let traces = run.load_traces(&agent)?;
            let trace = traces
                .iter()
                .find(|t| t.id == trace)
                .ok_or_else(|| Failure::data(format!("unknown trace `{trace}` for agent `{agent}`")))?;
            if step >= trace.len() {
                return Err(Failure::data(format!("trace `{}` has {} steps, no step {step}", trace.id, trace.len())));
            }
            if k < 1 || !trace.is_eligible(step, k) {
                return Err(Failure::data(format!(
                    "step {step} of `{}` is not eligible: k = {k} successor states are needed but only {} remain",
                    trace.id,
                    trace.len() - step - 1
                )));
            }
            let origin = &trace.steps[step];
            let (foil, method) = match requested {
                None => (select_cf_action(&origin.q, origin.action, CfMethod::SecondBest)?, CfMethod::SecondBest),
                Some(a) if a == origin.action => {
                    return Err(Failure::usage(format!(
                        "invalid foil: `{}` is the action the agent took at step {step}",
                        a.name()
                    )))
                }
                Some(a) => (a, CfMethod::UserChosen(a)),
            };
            let highway = pipeline::highway_for(&model)?;
            let pair = pair_at(&model, &highway, trace, step, foil, method, k)?;
            let body = build_cord_payload(&model, &highway, &pair, ScoreMeta::default())?;
            let json = serde_json::to_vec_pretty(&body).expect("payload serializes");
            if let Some(dir) = svg_dir {
                svg::write_svgs(&dir, &body)?;
            }
            match payload {
                Some(path) => crate::artifacts::write_bytes(&path, &json)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    let _ = stdout.write_all(&json);
                    let _ = stdout.write_all(b"\n");
                }
            }
        }
        Command::Summarize { agent, method, n, overlap } => {
            if let Some(s) = seed {
                config.summary.seed = s;
            }
            if let Some(m) = method {
                config.summary.method = m;
            }
            if let Some(n) = n {
                config.summary.n = n;
            }
            if let Some(o) = overlap {
                config.summary.overlap = o;
            }
            let config = validated(config)?;
            let model = require_agent(&run, &agent)?;
            let mut runner = Runner::open(run, config)?;
            let (_, pairs) = runner.ensure_pairs(&model)?;
            if pairs.is_empty() {
                runner.finish()?;
                return Err(Failure::data(format!("no eligible counterfactual pairs for `{agent}`")));
            }
            let doc = runner.summarize(&model, &pairs)?;
            let report = runner.rejoin_report(&model, &pairs)?;
            runner.finish()?;
            println!("{}", report.render());
            print_summary(&doc);
        }
        Command::Render { agent, trace, step, method } => {
            let config = validated(config)?;
            let method = parse_method(&config, method.as_deref())?;
            let model = require_agent(&run, &agent)?;
            if !run.has_pairs(&agent) {
                return Err(Failure::data(format!("no pairs stored for `{agent}`; run `coviz pairs` first")));
            }
            let mut runner = Runner::open(run, config)?;
            let traces = runner.run.load_traces(&agent)?;
            let pairs = runner.run.load_pairs(&agent, &traces)?;
            let highway = pipeline::highway_for(&model)?;
            let find = |tid: &str, i: usize| -> CliResult<&CfPair> {
                pairs
                    .iter()
                    .find(|p| p.trace_id == tid && p.origin_index == i)
                    .ok_or_else(|| Failure::data(format!("no stored pair at `{tid}` step {i}")))
            };
            match (trace, step) {
                (Some(tid), Some(i)) => {
                    let pair = find(&tid, i)?;
                    let payload = build_cord_payload(&model, &highway, pair, ScoreMeta::default())?;
                    let dir = runner.run.root().join("renders").join(format!("{tid}-{i:03}"));
                    runner.write_payload(&dir, &payload)?;
                    println!("{}", dir.display());
                }
                _ => {
                    let dir = runner.summary_dir(&agent, method);
                    let doc: SummaryDoc = read_summary(&dir.join("summary.json"))?;
                    for entry in &doc.entries {
                        let pair = find(&entry.trace_id, entry.origin_index)?;
                        let meta = ScoreMeta { method: Some(doc.method), score: entry.score };
                        let payload = build_cord_payload(&model, &highway, pair, meta)?;
                        runner.write_payload(&dir.join(format!("entry_{:02}", entry.rank)), &payload)?;
                    }
                    println!("{}", dir.display());
                }
            }
            runner.finish()?;
        }
        Command::Serve { port, host, static_dir } => {
            validated(config)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| Failure::usage(format!("invalid listen address `{host}:{port}`")))?;
            let store = ArtifactStore::load(run.root())
                .map_err(|e| Failure::data(format!("refusing to serve {}: {e}", run.root().display())))?;
            serve(store, addr, static_dir.as_deref())?;
        }
    }
    Ok(())
}

fn check_id(id: &str) -> CliResult {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Failure::usage(format!("agent id `{id}` must be non-empty ASCII letters, digits, `-` or `_`")))
    }
}

fn read_summary(path: &Path) -> CliResult<SummaryDoc> {
    let bytes = fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn print_summary(doc: &SummaryDoc) {
    println!("{} summary for {} (n = {}, overlap <= {}):", doc.method.name(), doc.agent_id, doc.n, doc.overlap);
    for e in &doc.entries {
        let score = e.score.map_or_else(|| "-".to_string(), |s| format!("{s:.6}"));
        println!(
            "  {:>2}. {} step {:>2}: {} instead of {}, score {score}",
            e.rank,
            e.trace_id,
            e.origin_index,
            e.foil_action.name(),
            e.fact_action.name()
        );
    }
}

fn serve(store: ArtifactStore, addr: SocketAddr, static_dir: Option<&Path>) -> CliResult {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure { code: EXIT_ENV, message: format!("cannot start runtime: {e}") })?;
    let agents = store.agents.len();
    let app = api::router(AppState::new(store), static_dir);
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure { code: EXIT_ENV, message: format!("cannot bind {addr}: {e}") })?;
        let local = listener.local_addr().map_err(|e| Failure { code: EXIT_ENV, message: e.to_string() })?;
        log::info!("serving {agents} agents on http://{local}");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("interrupt received, shutting down");
            })
            .await
            .map_err(|e| Failure { code: EXIT_ENV, message: format!("server error: {e}") })
    })
}
