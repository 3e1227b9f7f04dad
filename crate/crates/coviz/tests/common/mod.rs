#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use coviz::artifacts::RunDir;
use coviz::config::RunConfig;
use coviz::pipeline::Runner;
use coviz_core::{AgentProfile, CovizConfig, Hyperparams};

pub fn small_config() -> RunConfig {
    RunConfig {
        train: Hyperparams { episodes: 500, seed: 2, ..Hyperparams::default() },
        coviz: CovizConfig { nsim: 10, seed: 300, ..CovizConfig::default() },
        ..RunConfig::default()
    }
}

/// Trains `agents`, records traces and pairs, and writes the manifest.
pub fn build_run(root: &Path, agents: &[AgentProfile]) {
    let mut runner = Runner::open(RunDir::new(root), small_config()).unwrap();
    for profile in agents {
        let model = runner.train(profile.name(), profile.weights()).unwrap();
        runner.ensure_pairs(&model).unwrap();
    }
    runner.finish().unwrap();
}

pub fn coviz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coviz"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}
