use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::core::{derive_seed, EvaluatorKind, Module, TaskSet};
use crate::llm::{OpenAiBackend, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
use crate::llm::presets::{self, OptimizerMemory};
use crate::llm::{ChatBackend, LlmClient, ModelSettings};
use crate::merge::MergeConfig;
use crate::optimize::OptimizerConfig;
use crate::runtime::rule_world::{self, Layout, RuleWorldFactory, RuleWorldSpec};
use crate::runtime::ubl_env::{self, UblFactory};
use crate::runtime::{EnvFactory, RolloutConfig};

use super::OrchestrateError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentConfig {
    RuleWorld {
        /// Seed of the rule tokens; derived from the run seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rule_seed: Option<u64>,
        #[serde(default = "default_decoy")]
        decoy_bytes: usize,
        #[serde(default = "default_min_steps")]
        min_steps: u32,
    },
    Ubl,
}

fn default_decoy() -> usize {
    2_000
}

fn default_min_steps() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSource {
    /// A JSON task-set file.
    File { path: PathBuf },
    /// Generated rule-world tasks.
    RuleWorld {
        count: usize,
        prefix: String,
        #[serde(default = "default_layout")]
        layout: Layout,
    },
    /// Invoice documents plus a JSON Lines labels file.
    Ubl { documents: PathBuf, labels: PathBuf },
}

fn default_layout() -> Layout {
    Layout::RoundRobin
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Random,
    Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub mode: PartitionMode,
    /// Subset count for random partitions; category partitions make one
    /// subset per category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPreset {
    RuleWorld,
    Ubl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock {
        preset: MockPreset,
        #[serde(default = "default_memory")]
        memory: OptimizerMemory,
        #[serde(default = "default_context")]
        context_limit: usize,
        /// Simulated latency per call.
        #[serde(default)]
        latency_ms: u64,
        /// Actually sleep for the simulated latency.
        #[serde(default)]
        sleep: bool,
    },
    Live {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_s: u64,
    },
}

fn default_memory() -> OptimizerMemory {
    OptimizerMemory::Cumulative
}

fn default_context() -> usize {
    128_000
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: EnvironmentConfig,
    pub train: TaskSource,
    pub test: TaskSource,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub merge: MergeConfig,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default = "default_evaluator")]
    pub evaluator: EvaluatorKind,
    pub backend: BackendConfig,
    #[serde(default)]
    pub model: ModelSettings,
    /// Seed module file; the environment's default instruction otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_module: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Concurrent subset optimizers; one per subset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_workers: Option<usize>,
    #[serde(default = "default_rollout_workers")]
    pub rollout_workers: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_evaluator() -> EvaluatorKind {
    EvaluatorKind::ExactMatch
}

fn default_in_flight() -> usize {
    8
}

fn default_rollout_workers() -> usize {
    8
}

/// Where a resolved setting came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        }
    }
}

/// Resolved settings with their origins, in resolution order.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub entries: Vec<(String, String, Source)>,
}

impl Provenance {
    pub fn note(&mut self, key: &str, value: impl ToString, source: Source) {
        self.entries.retain(|(k, _, _)| k != key);
        self.entries.push((key.to_string(), value.to_string(), source));
    }

    pub fn render(&self) -> String {
        let width = self.entries.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        self.entries
            .iter()
            .map(|(k, v, s)| format!("{k:<width$}  {v}  ({})\n", s.as_str()))
            .collect()
    }
}

fn config_err(message: impl Into<String>) -> OrchestrateError {
    OrchestrateError::Config(message.into())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Parses a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<RunConfig, OrchestrateError> {
        let (cfg, _) = Self::load_raw(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Like [`RunConfig::load`], also returning the raw JSON. Validation is
    /// left to the caller so overrides can be applied first.
    pub fn load_raw(path: &Path) -> Result<(RunConfig, serde_json::Value), OrchestrateError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            crate::codec::from_json(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| config_err(e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.rebase(&base);
        Ok((cfg, raw))
    }

    pub fn rebase(&mut self, base: &Path) {
        for source in [&mut self.train, &mut self.test] {
            match source {
                TaskSource::File { path } => *path = resolve(base, path),
                TaskSource::Ubl { documents, labels } => {
                    *documents = resolve(base, documents);
                    *labels = resolve(base, labels);
                }
                TaskSource::RuleWorld { .. } => {}
            }
        }
        if let Some(p) = &mut self.seed_module {
            *p = resolve(base, p);
        }
        self.output_dir = resolve(base, &self.output_dir);
    }

    pub fn validate(&self) -> Result<(), OrchestrateError> {
        self.optimizer.validate().map_err(config_err)?;
        self.merge.validate().map_err(config_err)?;
        self.rollout.validate().map_err(config_err)?;
        if self.partition.n == Some(0) {
            return Err(config_err("partition.n must be at least 1"));
        }
        if self.partition.mode == PartitionMode::Random && self.partition.n.is_none() {
            return Err(config_err("partition.n is required for random partitions"));
        }
        if self.max_in_flight == 0 || self.rollout_workers == 0 || self.subset_workers == Some(0) {
            return Err(config_err("worker and in-flight limits must be at least 1"));
        }
        for source in [&self.train, &self.test] {
            match source {
                TaskSource::File { path } if !path.is_file() => {
                    return Err(config_err(format!("task file {} does not exist", path.display())))
                }
                TaskSource::Ubl { documents, labels } => {
                    if !documents.is_dir() {
                        return Err(config_err(format!("document directory {} does not exist", documents.display())));
                    }
                    if !labels.is_file() {
                        return Err(config_err(format!("labels file {} does not exist", labels.display())));
                    }
                }
                TaskSource::RuleWorld { count: 0, .. } => return Err(config_err("rule_world task count must be at least 1")),
                TaskSource::RuleWorld { .. } if !matches!(self.environment, EnvironmentConfig::RuleWorld { .. }) => {
                    return Err(config_err("rule_world tasks need the rule_world environment"))
                }
                _ => {}
            }
        }
        if let Some(p) = &self.seed_module {
            if !p.is_file() {
                return Err(config_err(format!("seed module {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Seed for a named component, independent of every other component.
    pub fn seed_for(&self, label: &str, index: u64) -> u64 {
        derive_seed(self.seed, label, index)
    }

    pub fn rule_world_spec(&self) -> Option<RuleWorldSpec> {
        match &self.environment {
            EnvironmentConfig::RuleWorld {
                rule_seed,
                decoy_bytes,
                min_steps,
            } => Some(RuleWorldSpec::generate(
                rule_seed.unwrap_or_else(|| self.seed_for("environment", 0)),
                &rule_world::CATEGORIES,
                *decoy_bytes,
                *min_steps,
            )),
            EnvironmentConfig::Ubl => None,
        }
    }

    pub fn env_factory(&self) -> Arc<dyn EnvFactory> {
        match &self.environment {
            EnvironmentConfig::RuleWorld { min_steps, .. } => Arc::new(RuleWorldFactory { min_steps: *min_steps }),
            EnvironmentConfig::Ubl => Arc::new(UblFactory),
        }
    }

    fn load_source(&self, source: &TaskSource, name: &str) -> Result<TaskSet, OrchestrateError> {
        let ts = match source {
            TaskSource::File { path } => {
                crate::codec::read_json::<TaskSet>(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?
            }
            TaskSource::RuleWorld { count, prefix, layout } => {
                let spec = self.rule_world_spec().ok_or_else(|| config_err("rule_world tasks need the rule_world environment"))?;
                spec.tasks(name, prefix, *count, *layout, self.seed_for("tasks", 0))
            }
            TaskSource::Ubl { documents, labels } => {
                ubl_env::load_tasks(name, documents, labels).map_err(|e| config_err(e.to_string()))?
            }
        };
        let problems = ts.validate();
        if !problems.is_empty() {
            return Err(config_err(format!("{name} tasks: {}", problems.join("; "))));
        }
        if ts.is_empty() {
            return Err(config_err(format!("{name} task set is empty")));
        }
        Ok(ts)
    }

    pub fn train_tasks(&self) -> Result<TaskSet, OrchestrateError> {
        self.load_source(&self.train, "train")
    }

    pub fn test_tasks(&self) -> Result<TaskSet, OrchestrateError> {
        self.load_source(&self.test, "test")
    }

    pub fn seed_module(&self) -> Result<Module, OrchestrateError> {
        match &self.seed_module {
            Some(p) => {
                let m: Module = crate::codec::read_json(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                let problems = m.validate();
                if problems.is_empty() {
                    Ok(m)
                } else {
                    Err(config_err(format!("seed module: {}", problems.join("; "))))
                }
            }
            None => Ok(Module::seed_instruction(match self.environment {
                EnvironmentConfig::RuleWorld { .. } => rule_world::SEED_INSTRUCTION,
                EnvironmentConfig::Ubl => ubl_env::SEED_INSTRUCTION,
            })),
        }
    }

    /// The backend this config selects. The live backend's API key comes
    /// from the environment only.
    pub fn backend(&self) -> Result<Arc<dyn ChatBackend>, OrchestrateError> {
        match &self.backend {
            BackendConfig::Mock {
                preset,
                memory,
                context_limit,
                latency_ms,
                sleep,
            } => {
                let builder = match preset {
                    MockPreset::RuleWorld => presets::rule_world(*memory),
                    MockPreset::Ubl => presets::ubl(),
                };
                Ok(Arc::new(
                    builder
                        .context_limit(*context_limit)
                        .seed(self.seed_for("mock", 0))
                        .latency(*latency_ms, *sleep)
                        .build(),
                ))
            }
            BackendConfig::Live { endpoint, timeout_s } => {
                let endpoint = endpoint
                    .clone()
                    .ok_or_else(|| config_err(format!("live backend needs an endpoint (config or {ENV_ENDPOINT})")))?;
                let key = std::env::var(ENV_API_KEY).ok();
                Ok(Arc::new(OpenAiBackend::new(&endpoint, key, Duration::from_secs(*timeout_s))))
            }
        }
    }

    pub fn client(&self) -> Result<LlmClient, OrchestrateError> {
        Ok(LlmClient::new(self.backend()?)
            .with_settings(self.model.clone())
            .with_max_in_flight(self.max_in_flight))
    }

    /// Settings the startup banner reports, with file or default origin.
    pub fn provenance(&self, raw: &serde_json::Value) -> Provenance {
        let mut p = Provenance::default();
        let mut note = |key: &str, pointer: &str, value: String| {
            let source = if raw.pointer(pointer).is_some() { Source::File } else { Source::Default };
            p.note(key, value, source);
        };
        note("seed", "/seed", self.seed.to_string());
        note("output_dir", "/output_dir", self.output_dir.display().to_string());
        let (kind, endpoint) = match &self.backend {
            BackendConfig::Mock { preset, .. } => (format!("mock ({preset:?})"), None),
            BackendConfig::Live { endpoint, .. } => ("live".to_string(), endpoint.clone()),
        };
        note("backend", "/backend/kind", kind);
        if let Some(e) = endpoint {
            note("backend.endpoint", "/backend/endpoint", e);
        }
        note("model.model_name", "/model/model_name", self.model.model_name.clone());
        note("partition.mode", "/partition/mode", format!("{:?}", self.partition.mode).to_lowercase());
        if let Some(n) = self.partition.n {
            note("partition.n", "/partition/n", n.to_string());
        }
        note("optimizer.epochs", "/optimizer/epochs", self.optimizer.epochs.to_string());
        note("merge.threshold", "/merge/threshold", self.merge.threshold.to_string());
        note("merge.clustering", "/merge/clustering", format!("{:?}", self.merge.clustering));
        note("max_in_flight", "/max_in_flight", self.max_in_flight.to_string());
        p
    }

    /// Applies the environment variables the live backend honors; they
    /// override file values.
    pub fn apply_env(&mut self, prov: &mut Provenance) {
        if let BackendConfig::Live { endpoint, .. } = &mut self.backend {
            if let Ok(e) = std::env::var(ENV_ENDPOINT) {
                prov.note("backend.endpoint", &e, Source::Env);
                *endpoint = Some(e);
            }
            if let Ok(m) = std::env::var(ENV_MODEL) {
                prov.note("model.model_name", &m, Source::Env);
                self.model.model_name = m;
            }
        }
    }
}
