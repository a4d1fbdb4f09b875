//! Task, backend, and experiment configuration.
//!
//! Everything has a sensible default so the CLI runs without a config file;
//! a TOML file overrides per-field. API keys come from an environment
//! variable only and are never stored in config or traces.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ExclusionRule;
use crate::oracles::Task;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Per-task parameters. Defaults follow the experimental setup: 5 trials of
/// 10 search iterations each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: Task,
    pub iterations: usize,
    pub trials: usize,
    /// Gradient-descent learning rate.
    pub lr: f64,
    /// Grid-search bounds (inclusive integers).
    pub grid_low: i64,
    pub grid_high: i64,
    /// Number of random seed solutions revealed to the black-box task.
    pub bb_seed_count: usize,
    /// Completions sampled per iteration; 1 disables self-consistency,
    /// 5 enables the majority-vote variant.
    pub self_consistency_n: usize,
}

impl TaskConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            iterations: 10,
            trials: 5,
            lr: 0.1,
            grid_low: 0,
            grid_high: 10,
            bb_seed_count: 2,
            self_consistency_n: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.iterations < 1 {
            return Err(ConfigError::Invalid("iterations must be at least 1".into()));
        }
        if self.trials < 1 {
            return Err(ConfigError::Invalid("trials must be at least 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(ConfigError::Invalid("lr must be positive".into()));
        }
        if self.grid_low > self.grid_high {
            return Err(ConfigError::Invalid(format!(
                "grid bounds inverted: {} > {}",
                self.grid_low, self.grid_high
            )));
        }
        if self.bb_seed_count < 1 {
            return Err(ConfigError::Invalid("bb_seed_count must be at least 1".into()));
        }
        if self.self_consistency_n < 1 {
            return Err(ConfigError::Invalid(
                "self_consistency_n must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Http,
    Scripted,
    PerfectOracle,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            BackendKind::Http => "http",
            BackendKind::Scripted => "scripted",
            BackendKind::PerfectOracle => "perfect-oracle",
        };
        f.write_str(name)
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "http" => Ok(BackendKind::Http),
            "scripted" => Ok(BackendKind::Scripted),
            "perfect-oracle" | "perfect_oracle" | "oracle" => Ok(BackendKind::PerfectOracle),
            other => Err(format!(
                "unknown backend '{other}' (expected http, scripted or perfect-oracle)"
            )),
        }
    }
}

/// Chat backend settings. The temperature default matches the reference
/// experimental setup (0.8).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model_name: String,
    pub temperature: f64,
    pub samples_per_call: usize,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Chat-completion endpoint URL (http backend).
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Global cap on in-flight HTTP requests across all trials.
    pub max_concurrent_requests: usize,
    /// Replies file (scripted backend).
    pub script: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::PerfectOracle,
            model_name: "gpt-3.5-turbo-0613".into(),
            temperature: 0.8,
            samples_per_call: 1,
            timeout_secs: 60,
            max_retries: 3,
            endpoint: None,
            api_key_env: "OPTBENCH_API_KEY".into(),
            max_concurrent_requests: 4,
            script: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.temperature < 0.0 {
            return Err(ConfigError::Invalid("temperature must be >= 0".into()));
        }
        if self.samples_per_call < 1 {
            return Err(ConfigError::Invalid("samples_per_call must be at least 1".into()));
        }
        if self.max_concurrent_requests < 1 {
            return Err(ConfigError::Invalid(
                "max_concurrent_requests must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Full experiment configuration: run-level settings plus per-task overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Transcript token budget before old messages are evicted.
    pub token_budget: usize,
    pub parallelism: usize,
    /// Directory of template override files; built-in templates otherwise.
    pub templates_dir: Option<PathBuf>,
    pub backend: BackendConfig,
    pub exclusion: ExclusionRule,
    pub tasks: BTreeMap<String, TaskOverrides>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            token_budget: 14_000,
            parallelism: default_parallelism(),
            templates_dir: None,
            backend: BackendConfig::default(),
            exclusion: ExclusionRule::default(),
            tasks: BTreeMap::new(),
        }
    }
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskOverrides {
    iterations: Option<usize>,
    trials: Option<usize>,
    lr: Option<f64>,
    grid_low: Option<i64>,
    grid_high: Option<i64>,
    bb_seed_count: Option<usize>,
    self_consistency_n: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ConfigFile {
    experiment: ExperimentSection,
    backend: BackendConfig,
    exclusion: ExclusionRule,
    pub tasks: BTreeMap<String, TaskOverrides>,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct ExperimentSection {
    seed: u64,
    token_budget: usize,
    parallelism: Option<usize>,
    templates_dir: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seed: 42,
            token_budget: 14_000,
            parallelism: None,
            templates_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        let cfg = Self {
            seed: file.experiment.seed,
            token_budget: file.experiment.token_budget,
            parallelism: file.experiment.parallelism.unwrap_or_else(default_parallelism),
            templates_dir: file.experiment.templates_dir,
            backend: file.backend,
            exclusion: file.exclusion,
            tasks: file.tasks,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.token_budget == 0 {
            return Err(ConfigError::Invalid("token_budget must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        self.backend.validate()?;
        for name in self.tasks.keys() {
            let task: Task = name
                .parse()
                .map_err(|e: String| ConfigError::Invalid(format!("[tasks.{name}]: {e}")))?;
            self.task_config(task).validate()?;
        }
        Ok(())
    }

    /// Effective per-task config: defaults overlaid with any `[tasks.<name>]`
    /// section from the file.
    pub fn task_config(&self, task: Task) -> TaskConfig {
        let mut cfg = TaskConfig::for_task(task);
        if let Some(over) = self.tasks.get(task.name()) {
            if let Some(v) = over.iterations {
                cfg.iterations = v;
            }
            if let Some(v) = over.trials {
                cfg.trials = v;
            }
            if let Some(v) = over.lr {
                cfg.lr = v;
            }
            if let Some(v) = over.grid_low {
                cfg.grid_low = v;
            }
            if let Some(v) = over.grid_high {
                cfg.grid_high = v;
            }
            if let Some(v) = over.bb_seed_count {
                cfg.bb_seed_count = v;
            }
            if let Some(v) = over.self_consistency_n {
                cfg.self_consistency_n = v;
            }
        }
        cfg
    }
}
