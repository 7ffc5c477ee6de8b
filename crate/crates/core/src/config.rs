//! TOML configuration shared by the CLI and the HTTP service.
//!
//! ```toml
//! bind = "127.0.0.1:8080"
//! cors_origin = "http://localhost:5173"
//! concurrency = 10
//! prices = "prices.json"
//!
//! [models]
//! decompose = "gpt-4.1"
//! rerank = "gpt-4.1"
//!
//! [[datasets]]
//! name = "demo"
//! index = "data/demo.index"
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{PriceTable, DEFAULT_CONCURRENCY};

pub const CONFIG_ENV: &str = "GUIRERANK_CONFIG";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_CHAT_MODEL: &str = "gpt-4.1";
pub const DEFAULT_EMBED_MODEL: &str = "text-embedding-3-small";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Model names per pipeline stage. `stub/<model>` selects the offline
/// provider for that stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageModels {
    pub annotate: String,
    pub embed: String,
    pub decompose: String,
    pub rerank: String,
}

impl Default for StageModels {
    fn default() -> Self {
        Self {
            annotate: DEFAULT_CHAT_MODEL.into(),
            embed: DEFAULT_EMBED_MODEL.into(),
            decompose: DEFAULT_CHAT_MODEL.into(),
            rerank: DEFAULT_CHAT_MODEL.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    /// Embedding index file. The annotation store defaults to
    /// `<name>.annotations.jsonl` beside it.
    pub index: PathBuf,
    #[serde(default)]
    pub store: Option<PathBuf>,
}

impl DatasetEntry {
    pub fn store_path(&self) -> PathBuf {
        match &self.store {
            Some(p) => p.clone(),
            None => default_store_path(&self.index, &self.name),
        }
    }
}

/// `<dir of index>/<dataset>.annotations.jsonl`
pub fn default_store_path(index: &Path, dataset: &str) -> PathBuf {
    index
        .parent()
        .unwrap_or(Path::new(""))
        .join(format!("{dataset}.annotations.jsonl"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    pub cors_origin: Option<String>,
    /// Ceiling on in-flight model requests, shared by every stage.
    pub concurrency: usize,
    /// Force the offline provider for every stage.
    pub stub: bool,
    /// Price table JSON; the built-in table is used when absent.
    pub prices: Option<PathBuf>,
    /// Multiplier on negative similarity in stage-one scoring.
    pub negative_weight: f64,
    pub temperature: f64,
    pub max_retries: u32,
    pub models: StageModels,
    pub datasets: Vec<DatasetEntry>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.into(),
            cors_origin: None,
            concurrency: DEFAULT_CONCURRENCY,
            stub: false,
            prices: None,
            negative_weight: 1.0,
            temperature: crate::gateway::DEFAULT_TEMPERATURE,
            max_retries: crate::gateway::DEFAULT_MAX_RETRIES,
            models: StageModels::default(),
            datasets: Vec::new(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut c: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base_dir.to_path_buf(),
            message: e.to_string(),
        })?;
        c.resolve_paths(base_dir);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Loads from `explicit`, else from `$GUIRERANK_CONFIG`, else defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.prices.as_mut() {
            fix(p);
        }
        for d in &mut self.datasets {
            fix(&mut d.index);
            if let Some(s) = d.store.as_mut() {
                fix(s);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        if !(self.negative_weight.is_finite() && self.negative_weight >= 0.0) {
            return Err(ConfigError::Invalid("negative_weight must be a non-negative number".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return Err(ConfigError::Invalid(format!("dataset \"{}\" registered twice", d.name)));
            }
        }
        Ok(())
    }

    pub fn price_table(&self) -> Result<PriceTable, ConfigError> {
        match &self.prices {
            None => Ok(PriceTable::builtin()),
            Some(p) => PriceTable::load(p).map_err(|e| ConfigError::Parse {
                path: p.clone(),
                message: e.to_string(),
            }),
        }
    }
}
