//! Progressive merging: cluster optimized modules by payload similarity,
//! merge small groups with the model, backtest every merge on the union of
//! its tasks, and recurse until one module remains.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::core::{
    bisecting_kmeans, cluster_count, derive_seed, featurize, kmeans, ClusterError, ClusteringKind, KMeansParams,
    MergeNode, MergeTree, Module, ModuleId, PerformanceStats, Task, TaskId, TaskSet,
};
use crate::journal::JournalEvent;
use crate::llm::{LlmError, Message, RequestTag};
use crate::pool::map_ordered;
use crate::render::{module_text, parse_payload};
use crate::runtime::{fill_template, EvalError, Runner};

pub const DEFAULT_MERGE_TEMPLATE: &str = "You consolidate several versions of the {kind} module of an LLM agent. Each version was optimized on a different group of training tasks; its success rate on those tasks is shown. Combine their insights into one module that keeps what made each version succeed and resolves conflicts in favor of the better-performing versions.
{members}
## Instruction
Output the single consolidated module inside one fenced block that opens with ```module and closes with ```.";

const REPROMPT: &str = "Your reply did not contain a usable module. Output the single consolidated module inside one fenced block that opens with ```module and closes with ```.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    TokenFrequency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeConfig {
    pub threshold: usize,
    pub clustering: ClusteringKind,
    pub kmeans_max_iters: usize,
    pub kmeans_restarts: usize,
    pub feature_kind: FeatureKind,
    pub seed: Option<u64>,
    /// Placeholders: `{kind}`, `{members}`.
    pub merge_prompt_template: String,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            threshold: 3,
            clustering: ClusteringKind::KMeans,
            kmeans_max_iters: 50,
            kmeans_restarts: 4,
            feature_kind: FeatureKind::TokenFrequency,
            seed: None,
            merge_prompt_template: DEFAULT_MERGE_TEMPLATE.to_string(),
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.threshold < 2 {
            return Err("merge.threshold must be at least 2".into());
        }
        if self.kmeans_max_iters == 0 {
            return Err("merge.kmeans_max_iters must be at least 1".into());
        }
        if self.kmeans_restarts == 0 {
            return Err("merge.kmeans_restarts must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MergeError {
    #[error("nothing to merge")]
    NoLeaves,
    #[error("leaf task sets overlap on {0}")]
    OverlappingLeaves(TaskId),
    #[error("invalid merge config: {0}")]
    Config(String),
    #[error("merge at {node}: {source}")]
    Llm {
        node: String,
        #[source]
        source: LlmError,
    },
    #[error("backtest at {node}: {source}")]
    Backtest {
        node: String,
        #[source]
        source: EvalError,
    },
    #[error("clustering at {node}: {source}")]
    Cluster {
        node: String,
        #[source]
        source: ClusterError,
    },
}

/// An optimized module with the tasks it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub module: Module,
    pub tasks: TaskSet,
    pub stats: PerformanceStats,
}

/// Outcome of merging one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMerge {
    pub module: Module,
    /// Why the model's consolidation was not used, if it was not.
    pub fallback: Option<String>,
}

/// The two model-facing operations of progressive merging.
pub trait MergeOps: Sync {
    fn merge(&self, members: &[(Module, PerformanceStats)], node: &str) -> Result<GroupMerge, MergeError>;

    fn backtest(&self, module: &Module, tasks: &[Task], node: &str) -> Result<PerformanceStats, MergeError>;

    /// Concurrency for sibling clusters.
    fn workers(&self) -> usize {
        1
    }
}

/// Best member by success rate; ties go to the smallest module id.
pub fn best_member(members: &[(Module, PerformanceStats)]) -> &Module {
    &members
        .iter()
        .max_by(|a, b| a.1.cmp_rate(&b.1).then_with(|| b.0.id.cmp(&a.0.id)))
        .expect("members nonempty")
        .0
}

fn render_members(members: &[(Module, PerformanceStats)]) -> String {
    let mut out = String::new();
    for (i, (m, s)) in members.iter().enumerate() {
        out.push_str(&format!(
            "\n## Version {} (success rate {}/{} ({:.2}))\n```module\n{}\n```\n",
            i + 1,
            s.successes,
            s.trials,
            s.success_rate(),
            module_text(m)
        ));
    }
    out
}

fn merged_module(members: &[(Module, PerformanceStats)], payload: crate::core::Payload) -> Module {
    if let Some((m, _)) = members.iter().find(|(m, _)| m.payload == payload) {
        return m.clone();
    }
    let mut lineage: Vec<ModuleId> = Vec::new();
    for (m, _) in members {
        if !lineage.contains(&m.id) {
            lineage.push(m.id.clone());
        }
    }
    if lineage.len() == 1 {
        Module::optimized(payload, &lineage[0])
    } else {
        Module::merged(payload, lineage)
    }
}

/// Model-backed merging and runner-backed backtests.
pub struct LlmMerge<'a> {
    pub runner: &'a Runner,
    pub cfg: &'a MergeConfig,
}

impl LlmMerge<'_> {
    fn ask(&self, messages: Vec<Message>) -> Result<String, LlmError> {
        let req = self.runner.client.request(RequestTag::Merge, messages);
        self.runner.client.complete(&req).map(|r| r.content)
    }

    fn accept(&self, members: &[(Module, PerformanceStats)], reply: &str) -> Result<Module, String> {
        let payload = parse_payload(members[0].0.kind(), reply)?;
        let module = merged_module(members, payload);
        let violations = module.validate();
        if violations.is_empty() {
            Ok(module)
        } else {
            Err(violations.join("; "))
        }
    }

    fn fallback(&self, members: &[(Module, PerformanceStats)], node: &str, reason: String) -> GroupMerge {
        let chosen = best_member(members).clone();
        self.runner.journal.push(JournalEvent::MergeFallback {
            node: node.to_string(),
            chosen: chosen.id.clone(),
            reason: reason.clone(),
        });
        GroupMerge {
            module: chosen,
            fallback: Some(reason),
        }
    }

    /// Folds members two at a time when the whole group does not fit.
    fn pairwise(&self, members: &[(Module, PerformanceStats)], node: &str) -> Result<GroupMerge, MergeError> {
        self.runner.journal.push(JournalEvent::PairwiseMerge {
            node: node.to_string(),
            members: members.len(),
        });
        let mut acc = members[0].clone();
        let mut fallback = None;
        for next in &members[1..] {
            let pair = [acc.clone(), next.clone()];
            let merged = self.merge(&pair, node)?;
            fallback = fallback.or(merged.fallback);
            let stats = PerformanceStats {
                module_id: merged.module.id.clone(),
                task_ids: acc.1.task_ids.iter().chain(&next.1.task_ids).cloned().collect(),
                successes: acc.1.successes + next.1.successes,
                trials: acc.1.trials + next.1.trials,
                prompt_tokens: 0,
                completion_tokens: 0,
                wall_clock_ms: 0,
            };
            acc = (merged.module, stats);
        }
        Ok(GroupMerge {
            module: acc.0,
            fallback,
        })
    }
}

impl MergeOps for LlmMerge<'_> {
    fn merge(&self, members: &[(Module, PerformanceStats)], node: &str) -> Result<GroupMerge, MergeError> {
        let llm_err = |source| MergeError::Llm {
            node: node.to_string(),
            source,
        };
        let prompt = fill_template(
            &self.cfg.merge_prompt_template,
            &[
                ("kind", match members[0].0.kind() {
                    crate::core::ModuleKind::Instruction => "instruction",
                    crate::core::ModuleKind::Toolset => "toolset",
                }),
                ("members", &render_members(members)),
            ],
        );
        let reply = match self.ask(vec![Message::user(prompt.clone())]) {
            Ok(r) => r,
            Err(LlmError::ContextWindowExceeded(m)) => {
                if members.len() > 2 {
                    return self.pairwise(members, node);
                }
                return Ok(self.fallback(members, node, format!("pair does not fit the context window: {m}")));
            }
            Err(e) => return Err(llm_err(e)),
        };
        let first = match self.accept(members, &reply) {
            Ok(module) => return Ok(GroupMerge { module, fallback: None }),
            Err(reason) => reason,
        };
        let retry = self.ask(vec![
            Message::user(prompt),
            Message::assistant(reply),
            Message::user(REPROMPT),
        ]);
        match retry {
            Ok(r) => match self.accept(members, &r) {
                Ok(module) => Ok(GroupMerge { module, fallback: None }),
                Err(second) => Ok(self.fallback(members, node, format!("unparseable merge reply: {first}; then: {second}"))),
            },
            Err(LlmError::ContextWindowExceeded(m)) => {
                Ok(self.fallback(members, node, format!("unparseable merge reply: {first}; reprompt did not fit: {m}")))
            }
            Err(e) => Err(llm_err(e)),
        }
    }

    fn backtest(&self, module: &Module, tasks: &[Task], node: &str) -> Result<PerformanceStats, MergeError> {
        backtest(module, tasks, self.runner, node)
    }

    fn workers(&self) -> usize {
        self.runner.workers
    }
}

/// One merge call over `members`, with the fallback rules applied.
pub fn merge_group(
    members: &[(Module, PerformanceStats)],
    runner: &Runner,
    cfg: &MergeConfig,
    node: &str,
) -> Result<GroupMerge, MergeError> {
    LlmMerge { runner, cfg }.merge(members, node)
}

/// One rollout and evaluation per task; failed rollouts count as failures.
pub fn backtest(module: &Module, tasks: &[Task], runner: &Runner, node: &str) -> Result<PerformanceStats, MergeError> {
    runner
        .evaluate(module, tasks, &format!("backtest/{node}"))
        .map(|(stats, _)| stats)
        .map_err(|source| MergeError::Backtest {
            node: node.to_string(),
            source,
        })
}

#[derive(Clone)]
struct Item {
    node_id: String,
    module: Module,
    tasks: Vec<Task>,
    stats: PerformanceStats,
}

struct Builder<'a> {
    ops: &'a dyn MergeOps,
    cfg: &'a MergeConfig,
    seed: u64,
    nodes: Mutex<Vec<MergeNode>>,
    modules: Mutex<BTreeMap<ModuleId, Module>>,
}

impl Builder<'_> {
    fn record(&self, node: MergeNode, module: &Module) {
        self.nodes.lock().expect("tree poisoned").push(node);
        self.modules
            .lock()
            .expect("tree poisoned")
            .entry(module.id.clone())
            .or_insert_with(|| module.clone());
    }

    fn direct(&self, items: Vec<Item>, id: String) -> Result<Item, MergeError> {
        let members: Vec<(Module, PerformanceStats)> =
            items.iter().map(|i| (i.module.clone(), i.stats.clone())).collect();
        let merged = self.ops.merge(&members, &id)?;
        let mut tasks: Vec<Task> = items.iter().flat_map(|i| i.tasks.iter().cloned()).collect();
        tasks.sort_by(|a, b| a.id.cmp(&b.id));
        let stats = self.ops.backtest(&merged.module, &tasks, &id)?;
        self.record(
            MergeNode {
                node_id: id.clone(),
                module_id: merged.module.id.clone(),
                children: items.iter().map(|i| i.node_id.clone()).collect(),
                covered_task_ids: tasks.iter().map(|t| t.id.clone()).collect(),
                backtest: Some(stats.clone()),
                depth: 0,
                fallback: merged.fallback,
            },
            &merged.module,
        );
        Ok(Item {
            node_id: id,
            module: merged.module,
            tasks,
            stats,
        })
    }

    fn build(&self, mut items: Vec<Item>, id: String) -> Result<Item, MergeError> {
        if items.len() == 1 {
            return Ok(items.remove(0));
        }
        let n = items.len();
        let k = cluster_count(n);
        if n <= self.cfg.threshold || self.cfg.clustering == ClusteringKind::None || k == 1 {
            return self.direct(items, id);
        }
        let modules: Vec<Module> = items.iter().map(|i| i.module.clone()).collect();
        let points: Vec<Vec<f64>> = featurize(&modules).into_iter().map(|f| f.values).collect();
        let params = KMeansParams {
            max_iters: self.cfg.kmeans_max_iters,
            restarts: self.cfg.kmeans_restarts,
            seed: derive_seed(self.seed, &id, 0),
        };
        let clustering = match self.cfg.clustering {
            ClusteringKind::BisectingKMeans => bisecting_kmeans(&points, k, &params),
            _ => kmeans(&points, k, &params),
        }
        .map_err(|source| MergeError::Cluster {
            node: id.clone(),
            source,
        })?;
        let groups: Vec<Vec<Item>> = clustering
            .groups()
            .into_iter()
            .map(|g| g.into_iter().map(|i| items[i].clone()).collect())
            .collect();
        let children = map_ordered(&groups, self.ops.workers(), |j, group| {
            self.build(group.clone(), format!("{id}.{j}"))
        })
        .into_iter()
        .collect::<Result<Vec<Item>, MergeError>>()?;
        self.direct(children, id)
    }
}

/// Result of progressive merging: the root module, its backtest (absent
/// when there was a single leaf), and the full tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Merged {
    pub module: Module,
    pub stats: PerformanceStats,
    pub tree: MergeTree,
}

/// Merges leaves bottom-up. A single leaf is returned unchanged with no
/// model calls. With clustering `None` all leaves are merged in one call.
pub fn progressive_merge(leaves: &[Leaf], ops: &dyn MergeOps, cfg: &MergeConfig, seed: u64) -> Result<Merged, MergeError> {
    cfg.validate().map_err(MergeError::Config)?;
    if leaves.is_empty() {
        return Err(MergeError::NoLeaves);
    }
    let mut seen = BTreeSet::new();
    for leaf in leaves {
        for t in &leaf.tasks.tasks {
            if !seen.insert(t.id.clone()) {
                return Err(MergeError::OverlappingLeaves(t.id.clone()));
            }
        }
    }
    let builder = Builder {
        ops,
        cfg,
        seed,
        nodes: Mutex::new(Vec::new()),
        modules: Mutex::new(BTreeMap::new()),
    };
    let items: Vec<Item> = leaves
        .iter()
        .enumerate()
        .map(|(i, leaf)| {
            let node_id = format!("leaf-{i}");
            builder.record(
                MergeNode {
                    node_id: node_id.clone(),
                    module_id: leaf.module.id.clone(),
                    children: Vec::new(),
                    covered_task_ids: leaf.tasks.ids().cloned().collect(),
                    backtest: None,
                    depth: 0,
                    fallback: None,
                },
                &leaf.module,
            );
            Item {
                node_id,
                module: leaf.module.clone(),
                tasks: leaf.tasks.tasks.clone(),
                stats: leaf.stats.clone(),
            }
        })
        .collect();
    let root = builder.build(items, "n".to_string())?;
    let tree = MergeTree::assemble(
        root.node_id.clone(),
        builder.nodes.into_inner().expect("tree poisoned"),
        builder.modules.into_inner().expect("tree poisoned"),
    );
    Ok(Merged {
        module: root.module,
        stats: root.stats,
        tree,
    })
}

/// [`progressive_merge`] with model-backed merges and backtests.
pub fn progressive_merge_llm(leaves: &[Leaf], runner: &Runner, cfg: &MergeConfig, seed: u64) -> Result<Merged, MergeError> {
    progressive_merge(leaves, &LlmMerge { runner, cfg }, cfg, seed)
}
