//! Run configuration: one TOML file with `[env]`, `[train]`, `[coviz]` and
//! `[summary]` sections. Missing keys fall back to the study defaults.

use std::fs;
use std::path::Path;

use coviz_core::{CovizConfig, EnvConfig, Hyperparams, ImportanceMethod};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummaryConfig {
    /// `last-state`, `qdiff-second`, `qdiff-worst` or `frequency`.
    pub method: String,
    pub n: usize,
    pub overlap: usize,
    /// Seed for frequency sampling.
    pub seed: u64,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        SummaryConfig { method: "last-state".into(), n: 4, overlap: 5, seed: 0 }
    }
}

impl SummaryConfig {
    pub fn importance_method(&self) -> Result<ImportanceMethod> {
        ImportanceMethod::parse(&self.method, self.seed).ok_or_else(|| {
            coviz_core::Error::Config(format!(
                "unknown importance method `{}` (expected last-state, qdiff-second, qdiff-worst, frequency)",
                self.method
            ))
            .into()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(coviz_core::Error::Config("n must be ≥ 1".into()).into());
        }
        self.importance_method().map(|_| ())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: Hyperparams,
    pub coviz: CovizConfig,
    pub summary: SummaryConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::ConfigFile {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Loads `path` when given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.coviz.validate()?;
        self.summary.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}
