//! Domain types shared by every stage of the pipeline.
//!
//! All types are plain data: immutable once built, `Send + Sync`, and
//! serializable with serde. Invariants are checked by the `validate`
//! methods, which return one human-readable entry per violation.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::content_id;

/// Content-addressed module identifier (hex digest prefix).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModuleId(pub String);

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        TaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Instruction,
    Toolset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Optimized,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    pub description: String,
}

/// One tool in a toolset module. Tools are prompt content; nothing here is
/// executed locally.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub signature: Vec<ToolParam>,
    pub body: String,
}

/// Letters, digits and underscore, not starting with a digit.
pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    Instruction(String),
    Toolset(Vec<ToolSpec>),
}

impl Payload {
    pub fn kind(&self) -> ModuleKind {
        match self {
            Payload::Instruction(_) => ModuleKind::Instruction,
            Payload::Toolset(_) => ModuleKind::Toolset,
        }
    }

    /// Flat text view used for featurization and prompts.
    pub fn text(&self) -> String {
        match self {
            Payload::Instruction(text) => text.clone(),
            Payload::Toolset(tools) => {
                let mut out = String::new();
                for tool in tools {
                    out.push_str(&tool.name);
                    out.push('\n');
                    out.push_str(&tool.description);
                    out.push('\n');
                    for param in &tool.signature {
                        out.push_str(&param.name);
                        out.push(' ');
                        out.push_str(&param.description);
                        out.push('\n');
                    }
                    out.push_str(&tool.body);
                    out.push('\n');
                }
                out
            }
        }
    }
}

/// An optimizable unit of the agent: instruction text or a toolset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Module {
    pub id: ModuleId,
    #[serde(flatten)]
    pub payload: Payload,
    pub lineage: Vec<ModuleId>,
    pub origin: Origin,
}

impl Module {
    /// Builds a module with a content-derived id. No invariant is enforced
    /// here; see [`Module::validate`].
    pub fn new(payload: Payload, lineage: Vec<ModuleId>, origin: Origin) -> Self {
        Module {
            id: content_id(&payload),
            payload,
            lineage,
            origin,
        }
    }

    pub fn seed(payload: Payload) -> Self {
        Module::new(payload, Vec::new(), Origin::Seed)
    }

    pub fn seed_instruction(text: impl Into<String>) -> Self {
        Module::seed(Payload::Instruction(text.into()))
    }

    pub fn optimized(payload: Payload, parent: &ModuleId) -> Self {
        Module::new(payload, alloc::vec![parent.clone()], Origin::Optimized)
    }

    pub fn merged(payload: Payload, parents: Vec<ModuleId>) -> Self {
        Module::new(payload, parents, Origin::Merged)
    }

    pub fn kind(&self) -> ModuleKind {
        self.payload.kind()
    }

    /// Every violated invariant, in a stable order. Empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.payload {
            Payload::Instruction(text) => {
                if text.trim().is_empty() {
                    out.push(String::from("payload empty"));
                }
            }
            Payload::Toolset(tools) => {
                if tools.is_empty() && self.origin != Origin::Seed {
                    out.push(String::from("payload empty"));
                }
                let mut seen = BTreeSet::new();
                for tool in tools {
                    if !is_identifier(&tool.name) {
                        out.push(format!("tool name invalid: {:?}", tool.name));
                    }
                    if !seen.insert(tool.name.as_str()) {
                        out.push(format!("duplicate tool name: {}", tool.name));
                    }
                }
            }
        }
        let lineage_ok = match self.origin {
            Origin::Seed => self.lineage.is_empty(),
            Origin::Optimized => self.lineage.len() == 1,
            Origin::Merged => self.lineage.len() >= 2,
        };
        if !lineage_ok {
            out.push(String::from("origin/lineage mismatch"));
        }
        if self.id != content_id(&self.payload) {
            out.push(String::from("id mismatch"));
        }
        out
    }
}

/// Free-function form of [`Module::validate`].
pub fn validate_module(module: &Module) -> Vec<String> {
    module.validate()
}

/// A query/label pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub query: String,
    pub label: String,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub payload_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSet {
    pub name: String,
    pub tasks: Vec<Task>,
}

impl TaskSet {
    pub fn new(name: impl Into<String>, tasks: Vec<Task>) -> Self {
        TaskSet {
            name: name.into(),
            tasks,
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &TaskId> {
        self.tasks.iter().map(|t| &t.id)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for task in &self.tasks {
            if !seen.insert(&task.id) {
                out.push(format!("duplicate task id: {}", task.id));
            }
            if task.label.is_empty() {
                out.push(format!("empty label: {}", task.id));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: u32,
    pub observation: String,
    pub action: String,
}

/// Observation/action record of one rollout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: TaskId,
    pub steps: Vec<Step>,
    pub final_answer: Option<String>,
    /// Step budget or prompt budget ran out before the environment finished.
    pub truncated: bool,
    /// Set when the rollout failed before producing any step.
    #[serde(default)]
    pub error: Option<String>,
}

impl Trajectory {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.steps.is_empty() && self.error.is_none() {
            out.push(String::from("no steps and no error"));
        }
        if self.steps.windows(2).any(|w| w[1].index <= w[0].index) {
            out.push(String::from("step index not increasing"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    ExactMatch,
    LlmJudge,
    Environment,
}

/// Verdict plus textual gradient for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub task_id: TaskId,
    pub success: bool,
    pub score: f64,
    pub critique: String,
    pub evaluator_kind: EvaluatorKind,
}

impl EvaluationRecord {
    /// Loss as used by the optimizer: `1 - score`.
    pub fn loss(&self) -> f64 {
        1.0 - self.score
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.score) {
            out.push(String::from("score out of range"));
        }
        if self.success && self.evaluator_kind == EvaluatorKind::ExactMatch && self.score != 1.0 {
            out.push(String::from("exact-match success must score 1"));
        }
        if !self.success
            && self.evaluator_kind == EvaluatorKind::LlmJudge
            && self.critique.trim().is_empty()
        {
            out.push(String::from("judge failure without critique"));
        }
        out
    }
}

/// Success counts and cost of evaluating one module on a task list.
///
/// The rate is kept as the exact pair `(successes, trials)`; comparisons go
/// through [`PerformanceStats::cmp_rate`] so they never see float drift.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformanceStats {
    pub module_id: ModuleId,
    pub task_ids: Vec<TaskId>,
    pub successes: u64,
    pub trials: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_clock_ms: u64,
}

impl PerformanceStats {
    pub fn success_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    /// Exact comparison of success rates by cross multiplication.
    pub fn cmp_rate(&self, other: &PerformanceStats) -> Ordering {
        let lhs = self.successes as u128 * other.trials as u128;
        let rhs = other.successes as u128 * self.trials as u128;
        lhs.cmp(&rhs)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.successes > self.trials {
            out.push(String::from("successes exceed trials"));
        }
        out
    }
}

/// Node of the bottom-up merge tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeNode {
    pub node_id: String,
    pub module_id: ModuleId,
    pub children: Vec<String>,
    pub covered_task_ids: BTreeSet<TaskId>,
    pub backtest: Option<PerformanceStats>,
    /// Distance from the root.
    pub depth: u32,
    /// Set when the merge at this node fell back instead of using the
    /// model's consolidated module.
    #[serde(default)]
    pub fallback: Option<String>,
}

impl MergeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tool(name: &str) -> ToolSpec {
        ToolSpec {
            name: name.into(),
            description: "d".into(),
            signature: vec![],
            body: "b".into(),
        }
    }

    #[test]
    fn valid_instruction_module() {
        let m = Module::seed_instruction("Extract the reference");
        assert!(validate_module(&m).is_empty());
    }

    #[test]
    fn empty_instruction_is_rejected() {
        let m = Module::seed_instruction("");
        assert_eq!(m.validate(), vec![String::from("payload empty")]);
    }

    #[test]
    fn merged_with_single_parent_is_rejected() {
        let parent = Module::seed_instruction("a");
        let m = Module::merged(Payload::Instruction("b".into()), vec![parent.id]);
        assert_eq!(m.validate(), vec![String::from("origin/lineage mismatch")]);
    }

    #[test]
    fn toolset_rules() {
        assert!(Module::seed(Payload::Toolset(vec![])).validate().is_empty());
        let parent = Module::seed(Payload::Toolset(vec![]));
        let empty = Module::optimized(Payload::Toolset(vec![]), &parent.id);
        assert_eq!(empty.validate(), vec![String::from("payload empty")]);
        let bad = Module::seed(Payload::Toolset(vec![tool("search"), tool("9x"), tool("search")]));
        let v = bad.validate();
        assert_eq!(v.len(), 2);
        assert!(v[0].starts_with("tool name invalid"));
        assert!(v[1].starts_with("duplicate tool name"));
    }

    #[test]
    fn identifier_syntax() {
        assert!(is_identifier("web_search2"));
        assert!(is_identifier("_x"));
        assert!(!is_identifier("2x"));
        assert!(!is_identifier("a-b"));
        assert!(!is_identifier(""));
    }

    #[test]
    fn tampered_id_is_reported() {
        let mut m = Module::seed_instruction("abc");
        m.id = ModuleId("00".into());
        assert_eq!(m.validate(), vec![String::from("id mismatch")]);
    }

    #[test]
    fn rate_comparison_is_exact() {
        let mk = |s, t| PerformanceStats {
            module_id: ModuleId("m".into()),
            task_ids: vec![],
            successes: s,
            trials: t,
            prompt_tokens: 0,
            completion_tokens: 0,
            wall_clock_ms: 0,
        };
        assert_eq!(mk(1, 3).cmp_rate(&mk(2, 6)), Ordering::Equal);
        assert_eq!(mk(2, 3).cmp_rate(&mk(3, 5)), Ordering::Greater);
        assert_eq!(mk(1, 3).success_rate(), 1.0 / 3.0);
    }

    #[test]
    fn evaluation_record_rules() {
        let rec = EvaluationRecord {
            task_id: TaskId::new("t"),
            success: false,
            score: 0.0,
            critique: String::new(),
            evaluator_kind: EvaluatorKind::LlmJudge,
        };
        assert_eq!(rec.validate().len(), 1);
        assert_eq!(rec.loss(), 1.0);
    }

    #[test]
    fn task_set_duplicates() {
        let t = Task {
            id: TaskId::new("a"),
            query: "q".into(),
            label: "y".into(),
            category: None,
            payload_path: None,
        };
        let ts = TaskSet::new("s", vec![t.clone(), t]);
        assert_eq!(ts.validate().len(), 1);
    }
}
