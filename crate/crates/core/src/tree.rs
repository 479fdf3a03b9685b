//! The merge tree produced by progressive merging, and its soundness checks.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::types::{MergeNode, Module, ModuleId, TaskId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeTree {
    pub root: String,
    /// Breadth-first from the root, children in merge order.
    pub nodes: Vec<MergeNode>,
    /// Every module referenced by a node.
    pub modules: BTreeMap<ModuleId, Module>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeViolation {
    MissingNode(String),
    MissingModule(String),
    CoverMismatch(String),
    OverlappingChildren(String),
    BacktestPresence(String),
    DepthMismatch(String),
    Unreachable(String),
}

impl MergeTree {
    /// Builds a tree from unordered nodes: orders them breadth-first from
    /// `root` and recomputes every depth.
    pub fn assemble(root: String, nodes: Vec<MergeNode>, modules: BTreeMap<ModuleId, Module>) -> Self {
        let mut by_id: BTreeMap<String, MergeNode> =
            nodes.into_iter().map(|n| (n.node_id.clone(), n)).collect();
        let mut ordered = Vec::with_capacity(by_id.len());
        let mut queue = VecDeque::from([(root.clone(), 0u32)]);
        while let Some((id, depth)) = queue.pop_front() {
            let Some(mut node) = by_id.remove(&id) else { continue };
            node.depth = depth;
            for child in &node.children {
                queue.push_back((child.clone(), depth + 1));
            }
            ordered.push(node);
        }
        MergeTree {
            root,
            nodes: ordered,
            modules,
        }
    }

    pub fn node(&self, id: &str) -> Option<&MergeNode> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn root_node(&self) -> Option<&MergeNode> {
        self.node(&self.root)
    }

    pub fn root_module(&self) -> Option<&Module> {
        self.root_node().and_then(|n| self.modules.get(&n.module_id))
    }

    pub fn leaves(&self) -> impl Iterator<Item = &MergeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = &MergeNode> {
        self.nodes.iter().filter(|n| !n.is_leaf())
    }

    /// Number of internal levels on the longest root-to-leaf path (the
    /// deepest leaf's depth). A lone leaf has depth 0.
    pub fn internal_depth(&self) -> u32 {
        self.leaves().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Tasks backtested at each depth, summed over the internal nodes there.
    pub fn level_volumes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in self.internal_nodes() {
            let d = node.depth as usize;
            if out.len() <= d {
                out.resize(d + 1, 0);
            }
            out[d] += node.covered_task_ids.len();
        }
        out
    }

    /// Total backtest rollouts over the whole tree.
    pub fn backtest_volume(&self) -> usize {
        self.internal_nodes()
            .filter_map(|n| n.backtest.as_ref())
            .map(|b| b.trials as usize)
            .sum()
    }

    pub fn fallback_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.fallback.is_some()).count()
    }

    /// Structural soundness: reachable nodes, disjoint child covers whose
    /// union is the parent's cover, backtests exactly on internal nodes,
    /// depths consistent with parent links.
    pub fn check(&self) -> Vec<TreeViolation> {
        let mut out = Vec::new();
        let by_id: BTreeMap<&str, &MergeNode> = self.nodes.iter().map(|n| (n.node_id.as_str(), n)).collect();
        if !by_id.contains_key(self.root.as_str()) {
            out.push(TreeViolation::MissingNode(self.root.clone()));
            return out;
        }
        let mut reached = BTreeSet::new();
        let mut queue = VecDeque::from([self.root.as_str()]);
        while let Some(id) = queue.pop_front() {
            if !reached.insert(id) {
                continue;
            }
            let node = by_id[id];
            if !self.modules.contains_key(&node.module_id) {
                out.push(TreeViolation::MissingModule(format!("{id}: {}", node.module_id)));
            }
            if node.is_leaf() == node.backtest.is_some() {
                out.push(TreeViolation::BacktestPresence(String::from(id)));
            }
            if node.is_leaf() {
                continue;
            }
            let mut union: BTreeSet<&TaskId> = BTreeSet::new();
            for child in &node.children {
                let Some(c) = by_id.get(child.as_str()) else {
                    out.push(TreeViolation::MissingNode(child.clone()));
                    continue;
                };
                if c.depth != node.depth + 1 {
                    out.push(TreeViolation::DepthMismatch(child.clone()));
                }
                for t in &c.covered_task_ids {
                    if !union.insert(t) {
                        out.push(TreeViolation::OverlappingChildren(format!("{id}: {t}")));
                    }
                }
                queue.push_back(child.as_str());
            }
            if union != node.covered_task_ids.iter().collect() {
                out.push(TreeViolation::CoverMismatch(String::from(id)));
            }
        }
        for node in &self.nodes {
            if !reached.contains(node.node_id.as_str()) {
                out.push(TreeViolation::Unreachable(node.node_id.clone()));
            }
        }
        out
    }
}

/// Depth bound for balanced progressive merging of `n` leaves with
/// threshold `t`: `ceil(log2(ln n / ln t)) + 1`, at least 1.
pub fn depth_bound(n: usize, t: usize) -> u32 {
    if n <= t {
        return 1;
    }
    let ratio = libm::log(n as f64) / libm::log(t as f64);
    libm::ceil(libm::log2(ratio)).max(0.0) as u32 + 1
}
