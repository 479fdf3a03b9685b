//! The end-to-end pipeline: divide the training set, optimize every subset
//! concurrently, merge the results, and score the final module on the test
//! set, persisting every intermediate artifact.
//!
//! Run directory layout:
//!
//! ```text
//! config.json              resolved configuration
//! ledger.jsonl             every model call, tagged by strategy and phase
//! journal.json             notable events (trims, fallbacks, ...)
//! leaves/<i>/tasks.json    subset i
//! leaves/<i>/module.json   subset i's optimized module
//! leaves/<i>/stats.json    its final-epoch training stats (written last)
//! leaves/<i>/ledger.jsonl  calls made while optimizing subset i
//! leaves/<i>/journal.json
//! merge_tree.json
//! modules/<strategy>.json  final module per strategy
//! report.json, report.csv, report.txt
//! timing.json              measured wall-clock per phase
//! ```

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::core::{partition_category, partition_random, verify_partition, Module, PartitionError, PerformanceStats, Task, TaskSet};
use crate::journal::{Journal, JournalEvent};
use crate::llm::{LedgerEvent, TagTotals, TokenLedger};
use crate::llm::{LlmClient, RequestTag};
use crate::merge::{progressive_merge_llm, Leaf, MergeError};
use crate::optimize::{optimize_subset, run_strategy, OptimizeError, Strategy};
use crate::pool::map_ordered;
use crate::runtime::{EvalError, Runner, TaskResult};

pub use config::{
    BackendConfig, EnvironmentConfig, MockPreset, PartitionConfig, PartitionMode, Provenance, RunConfig, Source, TaskSource,
};
pub use report::{CategoryScore, EnvironmentInfo, RunReport, StatsSummary, StrategyReport, TreeSummary};

#[derive(Debug, thiserror::Error)]
pub enum OrchestrateError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("subset {subset}: {source}")]
    Subset {
        subset: usize,
        #[source]
        source: OptimizeError,
    },
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
}

impl OrchestrateError {
    /// 2 for configuration problems, 3 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            OrchestrateError::Config(_) | OrchestrateError::Partition(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestrateError + '_ {
    move |source| OrchestrateError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn artifact<T>(r: Result<T, codec::CodecError>) -> Result<T, OrchestrateError> {
    r.map_err(|e| OrchestrateError::Artifact(e.to_string()))
}

/// Pipeline stages, for pausing a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Subset optimization done, leaves persisted.
    Leaves,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub stop_after: Option<Phase>,
    /// Fail instead of optimizing subsets that have no persisted leaf.
    pub require_leaves: bool,
}

/// Name used in reports and artifacts.
pub fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::FineGrained => "fgo",
        other => other.as_str(),
    }
}

pub fn parse_strategy(name: &str) -> Option<Strategy> {
    match name {
        "fgo" | "fine-grained" => Some(Strategy::FineGrained),
        "all-at-once" => Some(Strategy::AllAtOnce),
        "batch-wise" => Some(Strategy::BatchWise),
        "bootstrapping" => Some(Strategy::Bootstrapping),
        _ => None,
    }
}

/// Splits the training set as configured.
pub fn partition(cfg: &RunConfig, train: &TaskSet) -> Result<Vec<TaskSet>, OrchestrateError> {
    let parts = match cfg.partition.mode {
        PartitionMode::Category => {
            let parts = partition_category(train)?;
            if let Some(n) = cfg.partition.n {
                if n != parts.len() {
                    return Err(OrchestrateError::Config(format!(
                        "partition.n is {n} but the training set has {} categories",
                        parts.len()
                    )));
                }
            }
            parts
        }
        PartitionMode::Random => {
            let n = cfg.partition.n.unwrap_or(1);
            partition_random(train, n, cfg.seed_for("partition", 0))?
        }
    };
    debug_assert!(verify_partition(train, &parts));
    Ok(parts)
}

/// One rollout and evaluation per task; no optimization.
pub fn evaluate_module(module: &Module, tasks: &[Task], runner: &Runner, scope: &str) -> Result<(PerformanceStats, Vec<TaskResult>), OrchestrateError> {
    Ok(runner.evaluate(module, tasks, scope)?)
}

fn category_scores(tasks: &TaskSet, results: &[TaskResult]) -> BTreeMap<String, CategoryScore> {
    let mut by_cat: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for (task, r) in tasks.tasks.iter().zip(results) {
        if let Some(c) = &task.category {
            let e = by_cat.entry(c.clone()).or_default();
            e.0 += u64::from(r.record.success);
            e.1 += 1;
        }
    }
    by_cat
        .into_iter()
        .map(|(c, (s, t))| {
            (
                c,
                CategoryScore {
                    successes: s,
                    trials: t,
                    success_rate: s as f64 / t as f64,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LedgerLine {
    strategy: String,
    phase: String,
    #[serde(flatten)]
    event: LedgerEvent,
}

/// Call accounting for one strategy, split by phase.
struct Accounts {
    phases: Vec<(String, Vec<LedgerEvent>)>,
    journal: Vec<JournalEvent>,
}

impl Accounts {
    fn new() -> Self {
        Accounts {
            phases: Vec::new(),
            journal: Vec::new(),
        }
    }

    fn add(&mut self, phase: &str, ledger: &TokenLedger, journal: &Journal) {
        self.add_events(phase, ledger.events(), journal.events());
    }

    fn add_events(&mut self, phase: &str, events: Vec<LedgerEvent>, journal: Vec<JournalEvent>) {
        match self.phases.iter_mut().find(|(p, _)| p == phase) {
            Some((_, evs)) => evs.extend(events),
            None => self.phases.push((phase.to_string(), events)),
        }
        self.journal.extend(journal);
    }

    fn ledger(&self) -> TokenLedger {
        TokenLedger::from_events(self.phases.iter().flat_map(|(_, e)| e.iter().copied()))
    }

    fn phase_totals(&self) -> BTreeMap<String, TagTotals> {
        self.phases
            .iter()
            .map(|(p, evs)| (p.clone(), TokenLedger::fold(evs).values().fold(TagTotals::default(), |a, t| a.merged(t))))
            .collect()
    }

    fn journal(&self) -> Journal {
        Journal::from_events(self.journal.clone())
    }

    fn lines(&self, strategy: &str) -> Vec<LedgerLine> {
        let mut seq = 0;
        let mut out = Vec::new();
        for (phase, events) in &self.phases {
            for e in events {
                out.push(LedgerLine {
                    strategy: strategy.to_string(),
                    phase: phase.clone(),
                    event: LedgerEvent { seq, ..*e },
                });
                seq += 1;
            }
        }
        out
    }
}

fn write_ledger(path: &Path, events: impl IntoIterator<Item = impl Serialize>) -> Result<(), OrchestrateError> {
    let mut text = String::new();
    for e in events {
        text.push_str(&artifact(codec::to_canonical_line(&e))?);
        text.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn read_ledger<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, OrchestrateError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| artifact(codec::from_json(l)))
        .collect()
}

/// Everything persisted for one optimized subset.
#[derive(Debug, Clone)]
pub struct LeafArtifact {
    pub tasks: TaskSet,
    pub module: Module,
    pub stats: PerformanceStats,
    pub ledger: Vec<LedgerEvent>,
    pub journal: Vec<JournalEvent>,
}

impl LeafArtifact {
    fn write(&self, dir: &Path) -> Result<(), OrchestrateError> {
        artifact(codec::write_json(&dir.join("tasks.json"), &self.tasks))?;
        artifact(codec::write_json(&dir.join("module.json"), &self.module))?;
        write_ledger(&dir.join("ledger.jsonl"), &self.ledger)?;
        artifact(codec::write_json(&dir.join("journal.json"), &self.journal))?;
        artifact(codec::write_json(&dir.join("stats.json"), &self.stats))
    }

    /// A complete leaf from `dir`, if there is one.
    pub fn read(dir: &Path) -> Result<Option<LeafArtifact>, OrchestrateError> {
        if !dir.join("stats.json").is_file() {
            return Ok(None);
        }
        Ok(Some(LeafArtifact {
            tasks: artifact(codec::read_json(&dir.join("tasks.json")))?,
            module: artifact(codec::read_json(&dir.join("module.json")))?,
            stats: artifact(codec::read_json(&dir.join("stats.json")))?,
            ledger: read_ledger(&dir.join("ledger.jsonl"))?,
            journal: artifact(codec::read_json(&dir.join("journal.json")))?,
        }))
    }
}

/// Persisted leaves under `run_dir`, in subset order.
pub fn read_leaves(run_dir: &Path) -> Result<Vec<LeafArtifact>, OrchestrateError> {
    let mut out = Vec::new();
    for i in 0.. {
        let dir = run_dir.join("leaves").join(i.to_string());
        if !dir.is_dir() {
            break;
        }
        match LeafArtifact::read(&dir)? {
            Some(leaf) => out.push(leaf),
            None => return Err(OrchestrateError::Artifact(format!("leaf {} is incomplete", dir.display()))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timing {
    /// Measured milliseconds per strategy and phase.
    pub phases: BTreeMap<String, BTreeMap<String, u64>>,
    /// Measured milliseconds per optimized subset.
    pub leaves: Vec<u64>,
}

/// Shared state of one pipeline execution.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    client: LlmClient,
    runner: Runner,
    train: TaskSet,
    test: TaskSet,
    seed_module: Module,
    timing: Timing,
    ledger_lines: Vec<LedgerLine>,
    journal_events: Vec<JournalEvent>,
}

fn ms_since(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self, OrchestrateError> {
        cfg.validate()?;
        let client = cfg.client()?;
        let train = cfg.train_tasks()?;
        let test = cfg.test_tasks()?;
        let seed_module = cfg.seed_module()?;
        let mut runner = Runner::new(client.clone(), cfg.env_factory());
        runner.rollout = cfg.rollout.clone();
        runner.evaluator = cfg.evaluator;
        runner.workers = cfg.rollout_workers;
        let dir = cfg.output_dir.clone();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        artifact(codec::write_json(&dir.join("config.json"), &cfg))?;
        Ok(Pipeline {
            cfg,
            dir,
            client,
            runner,
            train,
            test,
            seed_module,
            timing: Timing::default(),
            ledger_lines: Vec::new(),
            journal_events: Vec::new(),
        })
    }

    pub fn train(&self) -> &TaskSet {
        &self.train
    }

    pub fn test(&self) -> &TaskSet {
        &self.test
    }

    /// A runner recording into fresh accounts.
    fn scoped(&self) -> (Runner, Arc<TokenLedger>, Arc<Journal>) {
        let ledger = Arc::new(TokenLedger::new());
        let journal = Arc::new(Journal::new());
        let runner = self.runner.with_client(self.client.with_ledger(ledger.clone()), journal.clone());
        (runner, ledger, journal)
    }

    fn time(&mut self, strategy: &str, phase: &str, ms: u64) {
        self.timing
            .phases
            .entry(strategy.to_string())
            .or_default()
            .insert(phase.to_string(), ms);
    }

    fn optimize_leaves(&mut self, parts: &[TaskSet], opts: &RunOptions) -> Result<Vec<LeafArtifact>, OrchestrateError> {
        let leaves_dir = self.dir.join("leaves");
        let workers = self.cfg.subset_workers.unwrap_or(parts.len()).max(1);
        let started = Instant::now();
        let results = map_ordered(parts, workers, |i, part| -> Result<(LeafArtifact, u64), OrchestrateError> {
            let dir = leaves_dir.join(i.to_string());
            if let Some(leaf) = LeafArtifact::read(&dir)? {
                if leaf.tasks == *part {
                    return Ok((leaf, 0));
                }
                return Err(OrchestrateError::Artifact(format!(
                    "persisted leaf {} was optimized on a different subset",
                    dir.display()
                )));
            }
            if opts.require_leaves {
                return Err(OrchestrateError::Artifact(format!("no persisted leaf at {}", dir.display())));
            }
            let t = Instant::now();
            let (runner, ledger, journal) = self.scoped();
            let optimized = optimize_subset(&self.seed_module, part, &runner, &self.cfg.optimizer, &format!("subset-{i}"))
                .map_err(|source| OrchestrateError::Subset { subset: i, source })?;
            let leaf = LeafArtifact {
                tasks: part.clone(),
                module: optimized.module,
                stats: optimized.stats,
                ledger: ledger.events(),
                journal: journal.sorted(),
            };
            leaf.write(&dir)?;
            Ok((leaf, ms_since(t)))
        });
        self.time("fgo", "optimize", ms_since(started));
        let mut leaves = Vec::with_capacity(results.len());
        for r in results {
            let (leaf, ms) = r?;
            self.timing.leaves.push(ms);
            leaves.push(leaf);
        }
        Ok(leaves)
    }

    fn test_phase(&mut self, strategy: &str, module: &Module, acc: &mut Accounts) -> Result<(PerformanceStats, Vec<TaskResult>), OrchestrateError> {
        let started = Instant::now();
        let (runner, ledger, journal) = self.scoped();
        let tasks = self.test.tasks.clone();
        let out = evaluate_module(module, &tasks, &runner, &format!("{strategy}/test"))?;
        acc.add("test", &ledger, &journal);
        self.time(strategy, "test", ms_since(started));
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        strategy: &str,
        module: &Module,
        train: &PerformanceStats,
        test: (PerformanceStats, Vec<TaskResult>),
        acc: &Accounts,
        subset_sizes: Option<Vec<usize>>,
        tree: Option<TreeSummary>,
    ) -> Result<StrategyReport, OrchestrateError> {
        let ledger = acc.ledger();
        let journal = acc.journal();
        artifact(codec::write_json(&self.dir.join("modules").join(format!("{strategy}.json")), module))?;
        self.ledger_lines.extend(acc.lines(strategy));
        self.journal_events.extend(journal.sorted());
        Ok(StrategyReport {
            strategy: strategy.to_string(),
            module_id: module.id.0.clone(),
            train: StatsSummary::from(train),
            test: StatsSummary::from(&test.0),
            test_by_category: category_scores(&self.test, &test.1),
            tokens: ledger
                .totals()
                .into_iter()
                .map(|(tag, t)| (tag.as_str().to_string(), t))
                .collect(),
            total: ledger.total(),
            phases: acc.phase_totals(),
            wall_clock_ms: ledger.total().wall_clock_ms,
            optimizer_calls: ledger.calls(RequestTag::Optimize),
            trims: journal.count("trim"),
            events: journal.counts(),
            subset_sizes,
            merge_tree: tree,
        })
    }

    /// Divide, optimize every subset concurrently, merge, test. Returns
    /// `None` when asked to stop after the leaves.
    pub fn run_fgo(&mut self, opts: &RunOptions) -> Result<Option<StrategyReport>, OrchestrateError> {
        let started = Instant::now();
        let parts = partition(&self.cfg, &self.train)?;
        self.time("fgo", "partition", ms_since(started));
        let leaves = self.optimize_leaves(&parts, opts)?;
        let mut acc = Accounts::new();
        for leaf in &leaves {
            acc.add_events("optimize", leaf.ledger.clone(), leaf.journal.clone());
        }
        if opts.stop_after == Some(Phase::Leaves) {
            write_ledger(&self.dir.join("ledger.jsonl"), acc.lines("fgo"))?;
            self.write_timing()?;
            return Ok(None);
        }

        let started = Instant::now();
        let (runner, ledger, journal) = self.scoped();
        let inputs: Vec<Leaf> = leaves
            .iter()
            .map(|l| Leaf {
                module: l.module.clone(),
                tasks: l.tasks.clone(),
                stats: l.stats.clone(),
            })
            .collect();
        let merged = progressive_merge_llm(&inputs, &runner, &self.cfg.merge, self.cfg.seed_for("merge", 0))?;
        acc.add("merge", &ledger, &journal);
        artifact(codec::write_json(&self.dir.join("merge_tree.json"), &merged.tree))?;
        self.time("fgo", "merge", ms_since(started));

        let test = self.test_phase("fgo", &merged.module, &mut acc)?;
        let sizes = parts.iter().map(TaskSet::len).collect();
        let report = self.finish(
            "fgo",
            &merged.module,
            &merged.stats,
            test,
            &acc,
            Some(sizes),
            Some(TreeSummary::from(&merged.tree)),
        )?;
        Ok(Some(report))
    }

    /// One baseline strategy on the undivided training set.
    pub fn run_baseline(&mut self, strategy: Strategy) -> Result<StrategyReport, OrchestrateError> {
        if strategy == Strategy::FineGrained {
            return Err(OrchestrateError::Config("the fine-grained strategy is not a baseline".into()));
        }
        let name = strategy_name(strategy);
        let started = Instant::now();
        let (runner, ledger, journal) = self.scoped();
        let mut opt = self.cfg.optimizer.clone();
        opt.strategy = strategy;
        let seed = opt.seed.unwrap_or_else(|| self.cfg.seed_for(name, 0));
        let optimized = run_strategy(&self.seed_module, &self.train, &runner, &opt, seed)?;
        let mut acc = Accounts::new();
        acc.add("optimize", &ledger, &journal);
        self.time(name, "optimize", ms_since(started));
        let test = self.test_phase(name, &optimized.module, &mut acc)?;
        self.finish(name, &optimized.module, &optimized.stats, test, &acc, None, None)
    }

    fn write_timing(&self) -> Result<(), OrchestrateError> {
        artifact(codec::write_json(&self.dir.join("timing.json"), &self.timing))
    }

    fn environment(&self) -> EnvironmentInfo {
        let mut categories: Vec<String> = self.train.tasks.iter().filter_map(|t| t.category.clone()).collect();
        categories.sort();
        categories.dedup();
        EnvironmentInfo {
            name: self.runner.env.name().to_string(),
            backend: self.client.describe(),
            model: self.client.settings().model_name.clone(),
            train_tasks: self.train.len(),
            test_tasks: self.test.len(),
            categories,
        }
    }

    /// Writes the run-level artifacts for `strategies`.
    pub fn report(&self, strategies: Vec<StrategyReport>) -> Result<RunReport, OrchestrateError> {
        let mut config = artifact(codec::to_canonical_value(&self.cfg))?;
        if let Some(obj) = config.as_object_mut() {
            obj.remove("output_dir");
        }
        let report = RunReport {
            environment: self.environment(),
            config,
            strategies,
        };
        write_ledger(&self.dir.join("ledger.jsonl"), &self.ledger_lines)?;
        let journal = Journal::from_events(self.journal_events.clone());
        artifact(codec::write_json(&self.dir.join("journal.json"), &journal.sorted()))?;
        self.write_timing()?;
        report.emit(&self.dir)?;
        Ok(report)
    }
}

/// Runs `strategies` in order into the configured output directory and
/// writes the combined report. Returns `None` if the run stopped after the
/// leaves.
pub fn run(cfg: RunConfig, strategies: &[Strategy], opts: &RunOptions) -> Result<Option<RunReport>, OrchestrateError> {
    if strategies.is_empty() {
        return Err(OrchestrateError::Config("no strategy selected".into()));
    }
    let mut p = Pipeline::new(cfg)?;
    let mut reports = Vec::new();
    for s in strategies {
        match s {
            Strategy::FineGrained => match p.run_fgo(opts)? {
                Some(r) => reports.push(r),
                None => return Ok(None),
            },
            other => reports.push(p.run_baseline(*other)?),
        }
    }
    p.report(reports).map(Some)
}

/// The fine-grained pipeline.
pub fn run_fgo(cfg: RunConfig, opts: &RunOptions) -> Result<Option<RunReport>, OrchestrateError> {
    run(cfg, &[Strategy::FineGrained], opts)
}

/// A single baseline strategy.
pub fn run_baseline(cfg: RunConfig, strategy: Strategy) -> Result<RunReport, OrchestrateError> {
    run(cfg, &[strategy], &RunOptions::default()).map(|r| r.expect("baselines do not pause"))
}

fn copy_dir(from: &Path, to: &Path) -> Result<(), OrchestrateError> {
    fs::create_dir_all(to).map_err(io_err(to))?;
    for entry in fs::read_dir(from).map_err(io_err(from))? {
        let entry = entry.map_err(io_err(from))?;
        let target = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), &target).map_err(io_err(&target))?;
        }
    }
    Ok(())
}

/// Continues a fine-grained run from the leaves persisted in `run_dir`.
/// `adjust` may change the configuration (e.g. merge settings); with `out`
/// the leaves are copied and the run continues there, leaving `run_dir`
/// untouched.
pub fn resume_fgo(
    run_dir: &Path,
    out: Option<&Path>,
    adjust: impl FnOnce(&mut RunConfig),
) -> Result<RunReport, OrchestrateError> {
    let mut cfg: RunConfig = codec::read_json(&run_dir.join("config.json"))
        .map_err(|e| OrchestrateError::Config(format!("{}: {e}", run_dir.display())))?;
    adjust(&mut cfg);
    if let Some(out) = out {
        if out != run_dir {
            copy_dir(&run_dir.join("leaves"), &out.join("leaves"))?;
        }
        cfg.output_dir = out.to_path_buf();
    } else {
        cfg.output_dir = run_dir.to_path_buf();
    }
    let opts = RunOptions {
        stop_after: None,
        require_leaves: true,
    };
    run(cfg, &[Strategy::FineGrained], &opts).map(|r| r.expect("resumed runs do not pause"))
}

/// The fine-grained pipeline once per subset count, each in
/// `<output_dir>/n-<n>` with a random partition; the combined report goes
/// to the output directory.
pub fn ablate_subsets(cfg: RunConfig, n_list: &[usize]) -> Result<RunReport, OrchestrateError> {
    if n_list.is_empty() {
        return Err(OrchestrateError::Config("empty subset-count list".into()));
    }
    let root = cfg.output_dir.clone();
    let mut strategies = Vec::new();
    let mut last = None;
    for &n in n_list {
        let mut c = cfg.clone();
        c.partition = PartitionConfig {
            mode: PartitionMode::Random,
            n: Some(n),
        };
        c.output_dir = root.join(format!("n-{n}"));
        let report = run_fgo(c, &RunOptions::default())?.expect("not paused");
        let mut s = report.strategies.into_iter().next().expect("one strategy");
        s.strategy = format!("fgo-n{n}");
        strategies.push(s);
        last = Some((report.environment, report.config));
    }
    let (environment, mut config) = last.expect("nonempty list");
    if let Some(obj) = config.as_object_mut() {
        obj.remove("partition");
    }
    let report = RunReport {
        environment,
        config,
        strategies,
    };
    report.emit(&root)?;
    Ok(report)
}
