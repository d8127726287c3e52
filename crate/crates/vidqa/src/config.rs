//! Engine configuration.
//!
//! Four layers, later wins: built-in defaults, a TOML file, `VIDQA_*`
//! environment variables, command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vidqa_core::agent::AgentConfig;
use vidqa_core::orchestrator::QaConfig;
use vidqa_core::summary::SummaryConfig;
use vidqa_core::Millis;

use crate::wire::WireConfig;

pub const DEFAULT_PROFILE: &str = "mock";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("environment variable {var}=`{value}`: {reason}")]
    Env { var: &'static str, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("unknown backend profile `{name}` (known: {known})")]
    UnknownProfile { name: String, known: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProfileConfig {
    Mock {
        #[serde(default)]
        script: Option<PathBuf>,
    },
    Wire(WireConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineConfig {
    pub store_dir: PathBuf,
    pub seed: u64,
    /// Frame sampling interval in seconds.
    pub interval_s: f64,
    pub top_n: usize,
    pub rethink_cap: usize,
    pub embedding_dim: usize,
    /// Share of the context window one summary batch may fill.
    pub budget_fraction: f64,
    pub max_functions: usize,
    pub anchor_floor: f64,
    pub repair_tolerance_ms: u64,
    /// Evaluation worker threads; 0 picks the number of CPUs.
    pub threads: usize,
    pub backend_profile: String,
    pub profiles: BTreeMap<String, ProfileConfig>,
    /// Shell template for frame extraction.
    pub extractor: Option<String>,
    /// JSON map of term to snippets for the web search function.
    pub search_fixture: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let mut profiles = BTreeMap::new();
        profiles.insert(DEFAULT_PROFILE.to_string(), ProfileConfig::Mock { script: None });
        profiles.insert("wire".to_string(), ProfileConfig::Wire(WireConfig::default()));
        EngineConfig {
            store_dir: PathBuf::from("store"),
            seed: 0,
            interval_s: 2.0,
            top_n: 5,
            rethink_cap: 3,
            embedding_dim: 512,
            budget_fraction: 0.7,
            max_functions: 4,
            anchor_floor: 0.2,
            repair_tolerance_ms: 2000,
            threads: 0,
            backend_profile: DEFAULT_PROFILE.to_string(),
            profiles,
            extractor: None,
            search_fixture: None,
        }
    }
}

/// The file layer; every key optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub interval_s: Option<f64>,
    pub top_n: Option<usize>,
    pub rethink_cap: Option<usize>,
    pub embedding_dim: Option<usize>,
    pub budget_fraction: Option<f64>,
    pub max_functions: Option<usize>,
    pub anchor_floor: Option<f64>,
    pub repair_tolerance_ms: Option<u64>,
    pub threads: Option<usize>,
    pub backend_profile: Option<String>,
    #[serde(default)]
    pub profiles: BTreeMap<String, ProfileConfig>,
    pub extractor: Option<String>,
    pub search_fixture: Option<PathBuf>,
}

/// The flag layer.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub store_dir: Option<PathBuf>,
    pub backend_profile: Option<String>,
    pub seed: Option<u64>,
}

fn env_parse<T: std::str::FromStr>(
    env: &dyn Fn(&str) -> Option<String>,
    var: &'static str,
) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    match env(var) {
        None => Ok(None),
        Some(value) => value
            .trim()
            .parse()
            .map(Some)
            .map_err(|e: T::Err| ConfigError::Env { var, value, reason: e.to_string() }),
    }
}

fn resolve_relative(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl EngineConfig {
    /// Builds the configuration. `env` looks up environment variables so
    /// tests can supply their own.
    pub fn resolve(overrides: &Overrides, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut cfg = EngineConfig::default();
        let config_path = overrides.config.clone().or_else(|| env("VIDQA_CONFIG").map(PathBuf::from));
        if let Some(path) = config_path {
            cfg.apply_file(&path)?;
        }
        cfg.apply_env(env)?;
        if let Some(v) = &overrides.store_dir {
            cfg.store_dir = v.clone();
        }
        if let Some(v) = &overrides.backend_profile {
            cfg.backend_profile = v.clone();
        }
        if let Some(v) = overrides.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let file: FileConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Toml { path: path.display().to_string(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        self.apply(file, base);
        Ok(())
    }

    fn apply(&mut self, f: FileConfig, base: &Path) {
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = f.$field { self.$field = v; } )* };
        }
        take!(seed, interval_s, top_n, rethink_cap, embedding_dim, budget_fraction, max_functions, anchor_floor,
              repair_tolerance_ms, threads, backend_profile);
        if let Some(v) = f.store_dir {
            self.store_dir = resolve_relative(base, v);
        }
        if let Some(v) = f.extractor {
            self.extractor = Some(v);
        }
        if let Some(v) = f.search_fixture {
            self.search_fixture = Some(resolve_relative(base, v));
        }
        for (name, mut profile) in f.profiles {
            if let ProfileConfig::Mock { script: Some(s) } = &mut profile {
                *s = resolve_relative(base, s.clone());
            }
            self.profiles.insert(name, profile);
        }
    }

    pub fn apply_env(&mut self, env: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = env("VIDQA_STORE") {
            self.store_dir = PathBuf::from(v);
        }
        macro_rules! num {
            ($($field:ident = $var:literal),*) => { $( if let Some(v) = env_parse(env, $var)? { self.$field = v; } )* };
        }
        num!(seed = "VIDQA_SEED", interval_s = "VIDQA_INTERVAL_S", top_n = "VIDQA_TOP_N",
             rethink_cap = "VIDQA_RETHINK_CAP", embedding_dim = "VIDQA_EMBED_DIM",
             budget_fraction = "VIDQA_BUDGET_FRACTION", max_functions = "VIDQA_MAX_FUNCTIONS",
             threads = "VIDQA_THREADS");
        if let Some(v) = env("VIDQA_BACKEND_PROFILE") {
            self.backend_profile = v;
        }
        if let Some(v) = env("VIDQA_EXTRACTOR") {
            self.extractor = Some(v);
        }
        if let Some(v) = env("VIDQA_MOCK_SCRIPT") {
            self.profiles.insert(DEFAULT_PROFILE.to_string(), ProfileConfig::Mock { script: Some(PathBuf::from(v)) });
        }
        let endpoint = env("VIDQA_ENDPOINT");
        let api_key = env("VIDQA_API_KEY");
        for profile in self.profiles.values_mut() {
            if let ProfileConfig::Wire(w) = profile {
                if let Some(url) = &endpoint {
                    w.base_url = url.clone();
                }
                if api_key.is_some() {
                    w.api_key = api_key.clone();
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be at least 1");
        }
        if self.top_n == 0 {
            return bad("top_n must be at least 1");
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction < 1.0) {
            return bad("budget_fraction must lie strictly between 0 and 1");
        }
        if !(self.interval_s > 0.0 && self.interval_s.is_finite()) {
            return bad("interval_s must be positive");
        }
        if !(-1.0..=1.0).contains(&self.anchor_floor) {
            return bad("anchor_floor must lie in [-1, 1]");
        }
        self.profile()?;
        Ok(())
    }

    pub fn profile(&self) -> Result<&ProfileConfig, ConfigError> {
        self.profiles.get(&self.backend_profile).ok_or_else(|| ConfigError::UnknownProfile {
            name: self.backend_profile.clone(),
            known: self.profiles.keys().cloned().collect::<Vec<_>>().join(", "),
        })
    }

    pub fn interval(&self) -> Millis {
        Millis::from_secs_f64(self.interval_s).unwrap_or(Millis(2000))
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            top_n: self.top_n,
            max_functions: self.max_functions,
            anchor_floor: self.anchor_floor,
            ..AgentConfig::default()
        }
    }

    pub fn qa_config(&self) -> QaConfig {
        QaConfig { rethink_cap: self.rethink_cap, agent: self.agent_config() }
    }

    pub fn summary_config(&self, context_window: usize) -> SummaryConfig {
        let mut c = SummaryConfig::for_context_window(context_window, self.budget_fraction);
        c.repair_tolerance = Millis(self.repair_tolerance_ms);
        c
    }
}
