//! The explore/evaluate/optimize epoch loop and the strategies built on it.

pub mod prompt;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{Module, PerformanceStats, Task, TaskSet};
use crate::journal::JournalEvent;
use crate::llm::{LlmError, Message, RequestTag};
use crate::render::parse_payload;
use crate::runtime::{stats_for, EvalError, Runner, TaskResult};

pub use prompt::{render_optimizer_prompt, EpochHistory, DEFAULT_OPTIMIZER_TEMPLATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    AllAtOnce,
    BatchWise,
    Bootstrapping,
    FineGrained,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::AllAtOnce => "all-at-once",
            Strategy::BatchWise => "batch-wise",
            Strategy::Bootstrapping => "bootstrapping",
            Strategy::FineGrained => "fine-grained",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrimPolicy {
    DropOldest,
    DropLongest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub epochs: u32,
    pub strategy: Strategy,
    pub batch_size: usize,
    /// Batches drawn per epoch when bootstrapping; defaults to
    /// `ceil(tasks / batch_size)`.
    pub bootstrap_samples: Option<usize>,
    /// Placeholders: `{kind}`, `{module}`, `{history}`.
    pub optimizer_prompt_template: String,
    pub trim_policy: TrimPolicy,
    pub seed: Option<u64>,
    /// Cap on each observation and action shown to the optimizer.
    pub observation_bytes: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            epochs: 3,
            strategy: Strategy::FineGrained,
            batch_size: 6,
            bootstrap_samples: None,
            optimizer_prompt_template: DEFAULT_OPTIMIZER_TEMPLATE.to_string(),
            trim_policy: TrimPolicy::DropOldest,
            seed: None,
            observation_bytes: 4_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 {
            return Err("optimizer.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("optimizer.batch_size must be at least 1".into());
        }
        if self.bootstrap_samples == Some(0) {
            return Err("optimizer.bootstrap_samples must be at least 1".into());
        }
        Ok(())
    }

    pub fn samples(&self, tasks: usize) -> usize {
        self.bootstrap_samples.unwrap_or_else(|| tasks.div_ceil(self.batch_size.max(1)))
    }

    /// Optimizer calls a strategy makes on `tasks` training tasks (per
    /// subset for the fine-grained strategy).
    pub fn step_budget(&self, tasks: usize) -> u64 {
        let e = u64::from(self.epochs);
        match self.strategy {
            Strategy::AllAtOnce | Strategy::FineGrained => e,
            Strategy::BatchWise => e * tasks.div_ceil(self.batch_size.max(1)) as u64,
            Strategy::Bootstrapping => e * self.samples(tasks) as u64,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error("cannot optimize on an empty task set")]
    EmptyTasks,
    #[error("{scope}: optimizer prompt does not fit the context window even with one trajectory")]
    HistoryExhausted { scope: String },
    #[error("{scope}: {source}")]
    Llm {
        scope: String,
        #[source]
        source: LlmError,
    },
    #[error("{scope}: {source}")]
    Eval {
        scope: String,
        #[source]
        source: EvalError,
    },
    #[error("invalid optimizer config: {0}")]
    Config(String),
}

/// Result of one strategy run.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub module: Module,
    /// Training evaluations of the final epoch, attributed to the returned
    /// module.
    pub stats: PerformanceStats,
    pub optimizer_calls: u64,
    pub trims: usize,
    /// Seed first, then every distinct module the optimizer produced.
    pub produced: Vec<Module>,
}

struct Loop<'a> {
    runner: &'a Runner,
    cfg: &'a OptimizerConfig,
    scope: String,
    queries: BTreeMap<String, String>,
    module: Module,
    produced: Vec<Module>,
    calls: u64,
    trims: usize,
}

impl<'a> Loop<'a> {
    fn new(runner: &'a Runner, cfg: &'a OptimizerConfig, seed: &Module, tasks: &TaskSet, scope: &str) -> Self {
        Loop {
            runner,
            cfg,
            scope: scope.to_string(),
            queries: tasks
                .tasks
                .iter()
                .map(|t| (t.id.as_str().to_string(), t.query.clone()))
                .collect(),
            module: seed.clone(),
            produced: vec![seed.clone()],
            calls: 0,
            trims: 0,
        }
    }

    fn explore(&self, tasks: &[Task]) -> Result<Vec<TaskResult>, OptimizeError> {
        self.runner
            .run_tasks(&self.module, tasks, &self.scope)
            .map_err(|source| OptimizeError::Eval {
                scope: self.scope.clone(),
                source,
            })
    }

    fn llm_err(&self, source: LlmError) -> OptimizeError {
        OptimizeError::Llm {
            scope: self.scope.clone(),
            source,
        }
    }

    fn trim(&mut self, history: &mut EpochHistory) {
        let at = match self.cfg.trim_policy {
            TrimPolicy::DropOldest => 0,
            TrimPolicy::DropLongest => {
                let size = |i: usize| {
                    let (t, r) = &history.pairs[i];
                    t.steps.iter().map(|s| s.observation.len() + s.action.len()).sum::<usize>() + r.critique.len()
                };
                (0..history.len()).max_by_key(|i| (size(*i), std::cmp::Reverse(*i))).unwrap_or(0)
            }
        };
        let (dropped, _) = history.pairs.remove(at);
        self.trims += 1;
        self.runner.journal.push(JournalEvent::Trim {
            scope: self.scope.clone(),
            step: self.calls.saturating_sub(1) as u32,
            dropped: dropped.task_id,
            remaining: history.len(),
        });
    }

    /// One optimizer call: trims the history until the prompt fits, then
    /// replaces the module with the reply's module block.
    fn step(&mut self, results: Vec<TaskResult>) -> Result<(), OptimizeError> {
        let mut history = EpochHistory {
            pairs: results.into_iter().map(|r| (r.trajectory, r.record)).collect(),
        };
        let step = self.calls as u32;
        self.calls += 1;
        let (prompt, reply) = loop {
            let queries = |id: &str| self.queries.get(id).cloned();
            let prompt = render_optimizer_prompt(
                &self.cfg.optimizer_prompt_template,
                &self.module,
                &history,
                &queries,
                self.cfg.observation_bytes,
            );
            let req = self.runner.client.request(RequestTag::Optimize, vec![Message::user(prompt.clone())]);
            match self.runner.client.complete(&req) {
                Ok(resp) => break (prompt, resp.content),
                Err(LlmError::ContextWindowExceeded(_)) => {
                    self.trim(&mut history);
                    if history.is_empty() {
                        return Err(OptimizeError::HistoryExhausted {
                            scope: self.scope.clone(),
                        });
                    }
                }
                Err(e) => return Err(self.llm_err(e)),
            }
        };
        let kind = self.module.kind();
        let parsed = match self.accept(kind, &reply) {
            Ok(m) => Ok(m),
            Err(first) => {
                let req = self.runner.client.request(
                    RequestTag::Optimize,
                    vec![
                        Message::user(prompt),
                        Message::assistant(reply),
                        Message::user(prompt::REPROMPT),
                    ],
                );
                match self.runner.client.complete(&req) {
                    Ok(resp) => self.accept(kind, &resp.content),
                    Err(LlmError::ContextWindowExceeded(m)) => Err(format!("{first}; reprompt did not fit: {m}")),
                    Err(e) => return Err(self.llm_err(e)),
                }
            }
        };
        match parsed {
            Ok(next) => {
                if next.id != self.module.id {
                    self.produced.push(next.clone());
                    self.module = next;
                }
            }
            Err(reason) => self.runner.journal.push(JournalEvent::KeptPrevious {
                scope: self.scope.clone(),
                step,
                reason,
            }),
        }
        Ok(())
    }

    fn accept(&self, kind: crate::core::ModuleKind, reply: &str) -> Result<Module, String> {
        let payload = parse_payload(kind, reply)?;
        if payload == self.module.payload {
            return Ok(self.module.clone());
        }
        let next = Module::optimized(payload, &self.module.id);
        let violations = next.validate();
        if violations.is_empty() {
            Ok(next)
        } else {
            Err(violations.join("; "))
        }
    }

    fn finish(self, final_epoch: Vec<TaskResult>) -> Optimized {
        let mut stats = stats_for(&self.module, &final_epoch);
        stats.module_id = self.module.id.clone();
        Optimized {
            module: self.module,
            stats,
            optimizer_calls: self.calls,
            trims: self.trims,
            produced: self.produced,
        }
    }
}

fn check(cfg: &OptimizerConfig, tasks: &TaskSet) -> Result<(), OptimizeError> {
    cfg.validate().map_err(OptimizeError::Config)?;
    if tasks.is_empty() {
        return Err(OptimizeError::EmptyTasks);
    }
    Ok(())
}

/// `epochs` rounds of: roll out every task, evaluate, one optimizer call
/// on the whole history.
pub fn optimize_subset(
    seed: &Module,
    subset: &TaskSet,
    runner: &Runner,
    cfg: &OptimizerConfig,
    scope: &str,
) -> Result<Optimized, OptimizeError> {
    check(cfg, subset)?;
    let mut lp = Loop::new(runner, cfg, seed, subset, scope);
    let mut last = Vec::new();
    for _ in 0..cfg.epochs {
        let results = lp.explore(&subset.tasks)?;
        last = results.clone();
        lp.step(results)?;
    }
    Ok(lp.finish(last))
}

pub fn run_all_at_once(seed: &Module, full: &TaskSet, runner: &Runner, cfg: &OptimizerConfig) -> Result<Optimized, OptimizeError> {
    optimize_subset(seed, full, runner, cfg, Strategy::AllAtOnce.as_str())
}

/// Contiguous batches in order, one optimizer call per batch, the module
/// carried from batch to batch.
pub fn run_batch_wise(seed: &Module, full: &TaskSet, runner: &Runner, cfg: &OptimizerConfig) -> Result<Optimized, OptimizeError> {
    check(cfg, full)?;
    let mut lp = Loop::new(runner, cfg, seed, full, Strategy::BatchWise.as_str());
    let mut last = Vec::new();
    for _ in 0..cfg.epochs {
        last.clear();
        for batch in full.tasks.chunks(cfg.batch_size) {
            let results = lp.explore(batch)?;
            last.extend(results.iter().cloned());
            lp.step(results)?;
        }
    }
    Ok(lp.finish(last))
}

/// The batches a bootstrapping run draws, per epoch; a pure function of
/// the seed.
pub fn bootstrap_batches(tasks: usize, cfg: &OptimizerConfig, seed: u64) -> Vec<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.epochs)
        .map(|_| {
            (0..cfg.samples(tasks))
                .map(|_| (0..cfg.batch_size).map(|_| rng.gen_range(0..tasks)).collect())
                .collect()
        })
        .collect()
}

/// Batches sampled uniformly with replacement, module carried forward.
pub fn run_bootstrapping(
    seed_module: &Module,
    full: &TaskSet,
    runner: &Runner,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Optimized, OptimizeError> {
    check(cfg, full)?;
    let scope = Strategy::Bootstrapping.as_str();
    let mut lp = Loop::new(runner, cfg, seed_module, full, scope);
    let mut last = Vec::new();
    for epoch in bootstrap_batches(full.len(), cfg, seed) {
        last.clear();
        for batch in epoch {
            let tasks: Vec<Task> = batch.iter().map(|i| full.tasks[*i].clone()).collect();
            runner.journal.push(JournalEvent::BootstrapBatch {
                scope: scope.to_string(),
                step: lp.calls as u32,
                task_ids: tasks.iter().map(|t| t.id.clone()).collect(),
            });
            let results = lp.explore(&tasks)?;
            last.extend(results.iter().cloned());
            lp.step(results)?;
        }
    }
    Ok(lp.finish(last))
}

/// Runs a baseline strategy on the undivided set. The fine-grained
/// strategy on one set is a single subset optimization.
pub fn run_strategy(
    seed_module: &Module,
    full: &TaskSet,
    runner: &Runner,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Optimized, OptimizeError> {
    match cfg.strategy {
        Strategy::AllAtOnce => run_all_at_once(seed_module, full, runner, cfg),
        Strategy::BatchWise => run_batch_wise(seed_module, full, runner, cfg),
        Strategy::Bootstrapping => run_bootstrapping(seed_module, full, runner, cfg, seed),
        Strategy::FineGrained => optimize_subset(seed_module, full, runner, cfg, "fine-grained"),
    }
}
