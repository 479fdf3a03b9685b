//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::codec;
use crate::core::{derive_seed, partition_category, partition_random, ClusteringKind, Module, TaskSet};
use crate::optimize::Strategy;
use crate::orchestrate::{
    self, ablate_subsets, resume_fgo, OrchestrateError, PartitionMode, Phase, Provenance, RunConfig, RunOptions, RunReport,
    Source,
};
use crate::runtime::rule_world::{Layout, RuleWorldSpec};
use crate::runtime::ubl_env;

#[derive(Debug, Parser)]
#[command(name = "fgo", version, about = "Divide a task set, optimize agent modules per subset, merge them back")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Fgo,
    AllAtOnce,
    BatchWise,
    Bootstrapping,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Fgo => Strategy::FineGrained,
            StrategyArg::AllAtOnce => Strategy::AllAtOnce,
            StrategyArg::BatchWise => Strategy::BatchWise,
            StrategyArg::Bootstrapping => Strategy::Bootstrapping,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusteringArg {
    Kmeans,
    Bisecting,
    None,
}

impl From<ClusteringArg> for ClusteringKind {
    fn from(c: ClusteringArg) -> Self {
        match c {
            ClusteringArg::Kmeans => ClusteringKind::KMeans,
            ClusteringArg::Bisecting => ClusteringKind::BisectingKMeans,
            ClusteringArg::None => ClusteringKind::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Random,
    Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskKind {
    RuleWorld,
    Ubl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Grouped,
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StopArg {
    Leaves,
}

/// Settings shared by commands that read a run config.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Output directory (overrides `output_dir`)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Global seed (overrides `seed`)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimization epochs (overrides `optimizer.epochs`)
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Live backend endpoint (overrides `backend.endpoint` and FGO_LLM_ENDPOINT)
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name (overrides `model.model_name` and FGO_LLM_MODEL)
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one or more strategies and write the run directory
    Run {
        /// Run configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Strategies to run, comma separated
        #[arg(long, value_enum, value_delimiter = ',', default_value = "fgo")]
        strategy: Vec<StrategyArg>,
        /// Number of subsets for random partitions (overrides `partition.n`)
        #[arg(long)]
        n: Option<usize>,
        /// Largest group merged directly (overrides `merge.threshold`)
        #[arg(long)]
        threshold: Option<usize>,
        /// Clustering used while merging (overrides `merge.clustering`)
        #[arg(long, value_enum)]
        clustering: Option<ClusteringArg>,
        /// Stop after this phase; resume later with `merge`
        #[arg(long, value_enum)]
        stop_after: Option<StopArg>,
        /// Repeat the run with derived seeds, each in `<out>/repeat-<r>`
        #[arg(long, default_value_t = 1)]
        repeats: u32,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Split a task-set file into subset files
    Partition {
        /// Task-set file (JSON)
        #[arg(long)]
        train: PathBuf,
        /// Partition mode
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Number of subsets (random mode)
        #[arg(long)]
        n: Option<usize>,
        /// Shuffle seed (random mode)
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the subset files
        #[arg(long, default_value = "subsets")]
        out: PathBuf,
    },
    /// Merge persisted leaves of a run and score the result
    Merge {
        /// Run directory holding `config.json` and `leaves/`
        #[arg(long)]
        leaves: PathBuf,
        /// Largest group merged directly
        #[arg(long)]
        threshold: Option<usize>,
        /// Clustering used while merging
        #[arg(long, value_enum)]
        clustering: Option<ClusteringArg>,
        /// Output directory; defaults to the run directory itself
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a module on a task set without optimizing
    Evaluate {
        /// Module file (JSON)
        #[arg(long)]
        module: PathBuf,
        /// Task-set file (JSON)
        #[arg(long)]
        tasks: PathBuf,
        /// Run configuration supplying environment and backend
        #[arg(long)]
        config: PathBuf,
        /// Endpoint and model overrides for live backends
        #[arg(long)]
        endpoint: Option<String>,
        /// Model name
        #[arg(long)]
        model: Option<String>,
    },
    /// Print the tables of a finished run
    Report {
        /// Run directory
        #[arg(long)]
        run: PathBuf,
        /// Print the CSV series instead of the table
        #[arg(long)]
        csv: bool,
    },
    /// Sweep the number of subsets
    AblateSubsets {
        /// Run configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Subset counts, comma separated
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate a synthetic task corpus
    Tasks {
        /// Corpus kind
        #[arg(long, value_enum)]
        kind: TaskKind,
        /// Number of tasks
        #[arg(long)]
        count: usize,
        /// Task id prefix
        #[arg(long, default_value = "task")]
        prefix: String,
        /// Category layout (rule-world)
        #[arg(long, value_enum, default_value = "round-robin")]
        layout: LayoutArg,
        /// Rule seed (rule-world)
        #[arg(long, default_value_t = 0)]
        rule_seed: u64,
        /// Filler bytes per query (rule-world)
        #[arg(long, default_value_t = 2000)]
        decoy_bytes: usize,
        /// Line items per invoice (ubl)
        #[arg(long, default_value_t = 3)]
        line_items: usize,
        /// Content seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (rule-world) or directory (ubl)
        #[arg(long)]
        out: PathBuf,
    },
}

fn fail(e: OrchestrateError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn config_error(message: impl Into<String>) -> OrchestrateError {
    OrchestrateError::Config(message.into())
}

/// Loads a config and applies env and flag overrides, reporting where each
/// setting came from.
fn load_config(path: &Path, apply: impl FnOnce(&mut RunConfig, &mut Provenance)) -> Result<RunConfig, OrchestrateError> {
    let (mut cfg, raw) = RunConfig::load_raw(path)?;
    let mut prov = cfg.provenance(&raw);
    cfg.apply_env(&mut prov);
    apply(&mut cfg, &mut prov);
    cfg.validate()?;
    eprintln!("settings (flags > env > file > defaults):\n{}", prov.render());
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, prov: &mut Provenance, o: &Overrides) {
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
        prov.note("output_dir", out.display(), Source::Flag);
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
        prov.note("seed", seed, Source::Flag);
    }
    if let Some(e) = o.epochs {
        cfg.optimizer.epochs = e;
        prov.note("optimizer.epochs", e, Source::Flag);
    }
    if let Some(endpoint) = &o.endpoint {
        if let orchestrate::BackendConfig::Live { endpoint: ep, .. } = &mut cfg.backend {
            *ep = Some(endpoint.clone());
            prov.note("backend.endpoint", endpoint, Source::Flag);
        }
    }
    if let Some(m) = &o.model {
        cfg.model.model_name = m.clone();
        prov.note("model.model_name", m, Source::Flag);
    }
}

fn print_report(report: &RunReport) {
    print!("{}", report.to_table());
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    config: &Path,
    strategies: &[StrategyArg],
    n: Option<usize>,
    threshold: Option<usize>,
    clustering: Option<ClusteringArg>,
    stop_after: Option<StopArg>,
    repeats: u32,
    overrides: &Overrides,
) -> Result<(), OrchestrateError> {
    let cfg = load_config(config, |cfg, prov| {
        apply_overrides(cfg, prov, overrides);
        if let Some(n) = n {
            cfg.partition.n = Some(n);
            if cfg.partition.mode == PartitionMode::Category {
                cfg.partition.mode = PartitionMode::Random;
                prov.note("partition.mode", "random", Source::Flag);
            }
            prov.note("partition.n", n, Source::Flag);
        }
        if let Some(t) = threshold {
            cfg.merge.threshold = t;
            prov.note("merge.threshold", t, Source::Flag);
        }
        if let Some(c) = clustering {
            cfg.merge.clustering = c.into();
            prov.note("merge.clustering", format!("{:?}", ClusteringKind::from(c)), Source::Flag);
        }
    })?;
    if repeats == 0 {
        return Err(config_error("--repeats must be at least 1"));
    }
    let strategies: Vec<Strategy> = strategies.iter().map(|s| (*s).into()).collect();
    let opts = RunOptions {
        stop_after: stop_after.map(|_| Phase::Leaves),
        require_leaves: false,
    };
    let mut reports = Vec::new();
    for r in 0..repeats {
        let mut c = cfg.clone();
        if repeats > 1 {
            c.output_dir = cfg.output_dir.join(format!("repeat-{r}"));
            if r > 0 {
                c.seed = derive_seed(cfg.seed, "repeat", u64::from(r));
            }
        }
        match orchestrate::run(c.clone(), &strategies, &opts)? {
            Some(report) => {
                print_report(&report);
                reports.push(report);
            }
            None => println!("leaves written to {}; continue with `fgo merge --leaves {}`", c.output_dir.display(), c.output_dir.display()),
        }
    }
    if reports.len() > 1 {
        println!("\ntest success over {} repeats", reports.len());
        for (i, s) in reports[0].strategies.iter().enumerate() {
            let rates: Vec<f64> = reports.iter().map(|r| r.strategies[i].test.success_rate).collect();
            let avg = rates.iter().sum::<f64>() / rates.len() as f64;
            let best = rates.iter().cloned().fold(f64::MIN, f64::max);
            println!("{}: avg {:.1}%, best {:.1}%", s.strategy, 100.0 * avg, 100.0 * best);
        }
    }
    Ok(())
}

fn cmd_partition(train: &Path, mode: ModeArg, n: Option<usize>, seed: u64, out: &Path) -> Result<(), OrchestrateError> {
    let ts: TaskSet = codec::read_json(train).map_err(|e| config_error(e.to_string()))?;
    let parts = match mode {
        ModeArg::Category => partition_category(&ts)?,
        ModeArg::Random => {
            let n = n.ok_or_else(|| config_error("--n is required for random partitions"))?;
            partition_random(&ts, n, seed)?
        }
    };
    for (i, part) in parts.iter().enumerate() {
        let path = out.join(format!("subset-{i}.json"));
        codec::write_json(&path, part).map_err(|e| OrchestrateError::Artifact(e.to_string()))?;
        println!("{}\t{}\t{}", path.display(), part.name, part.len());
    }
    Ok(())
}

fn cmd_merge(leaves: &Path, threshold: Option<usize>, clustering: Option<ClusteringArg>, out: Option<&Path>) -> Result<(), OrchestrateError> {
    let mut bad = None;
    let report = resume_fgo(leaves, out, |cfg| {
        if let Some(t) = threshold {
            cfg.merge.threshold = t;
        }
        if let Some(c) = clustering {
            cfg.merge.clustering = c.into();
        }
        if let Err(e) = cfg.merge.validate() {
            bad = Some(e);
        }
    });
    if let Some(e) = bad {
        return Err(config_error(e));
    }
    print_report(&report?);
    Ok(())
}

fn cmd_evaluate(module: &Path, tasks: &Path, config: &Path, endpoint: Option<String>, model: Option<String>) -> Result<(), OrchestrateError> {
    let overrides = Overrides {
        endpoint,
        model,
        ..Overrides::default()
    };
    let cfg = load_config(config, |cfg, prov| apply_overrides(cfg, prov, &overrides))?;
    let module: Module = codec::read_json(module).map_err(|e| config_error(e.to_string()))?;
    let ts: TaskSet = codec::read_json(tasks).map_err(|e| config_error(e.to_string()))?;
    let mut runner = crate::runtime::Runner::new(cfg.client()?, cfg.env_factory());
    runner.rollout = cfg.rollout.clone();
    runner.evaluator = cfg.evaluator;
    runner.workers = cfg.rollout_workers;
    let (stats, _) = orchestrate::evaluate_module(&module, &ts.tasks, &runner, "evaluate")?;
    print!("{}", codec::to_canonical_json(&stats).map_err(|e| OrchestrateError::Artifact(e.to_string()))?);
    Ok(())
}

fn cmd_report(run: &Path, csv: bool) -> Result<(), OrchestrateError> {
    let report = RunReport::load(run)?;
    if csv {
        print!("{}", report.to_csv());
    } else {
        print_report(&report);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_tasks(
    kind: TaskKind,
    count: usize,
    prefix: &str,
    layout: LayoutArg,
    rule_seed: u64,
    decoy_bytes: usize,
    line_items: usize,
    seed: u64,
    out: &Path,
) -> Result<(), OrchestrateError> {
    if count == 0 {
        return Err(config_error("--count must be at least 1"));
    }
    match kind {
        TaskKind::RuleWorld => {
            let spec = RuleWorldSpec::generate(rule_seed, &crate::runtime::rule_world::CATEGORIES, decoy_bytes, 1);
            let layout = match layout {
                LayoutArg::Grouped => Layout::Grouped,
                LayoutArg::RoundRobin => Layout::RoundRobin,
            };
            let ts = spec.tasks(prefix, prefix, count, layout, seed);
            codec::write_json(out, &ts).map_err(|e| OrchestrateError::Artifact(e.to_string()))?;
            println!("{}\t{} tasks", out.display(), ts.len());
        }
        TaskKind::Ubl => {
            let (docs, labels) =
                ubl_env::write_corpus(out, prefix, count, line_items, seed).map_err(|e| OrchestrateError::Artifact(e.to_string()))?;
            println!("{}\t{}\t{count} tasks", docs.display(), labels.display());
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            strategy,
            n,
            threshold,
            clustering,
            stop_after,
            repeats,
            overrides,
        } => cmd_run(&config, &strategy, n, threshold, clustering, stop_after, repeats, &overrides),
        Command::Partition { train, mode, n, seed, out } => cmd_partition(&train, mode, n, seed, &out),
        Command::Merge {
            leaves,
            threshold,
            clustering,
            out,
        } => cmd_merge(&leaves, threshold, clustering, out.as_deref()),
        Command::Evaluate {
            module,
            tasks,
            config,
            endpoint,
            model,
        } => cmd_evaluate(&module, &tasks, &config, endpoint, model),
        Command::Report { run, csv } => cmd_report(&run, csv),
        Command::AblateSubsets {
            config,
            n_list,
            overrides,
        } => load_config(&config, |cfg, prov| apply_overrides(cfg, prov, &overrides))
            .and_then(|cfg| ablate_subsets(cfg, &n_list))
            .map(|r| print_report(&r)),
        Command::Tasks {
            kind,
            count,
            prefix,
            layout,
            rule_seed,
            decoy_bytes,
            line_items,
            seed,
            out,
        } => cmd_tasks(kind, count, &prefix, layout, rule_seed, decoy_bytes, line_items, seed, &out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => fail(e),
    }
}
