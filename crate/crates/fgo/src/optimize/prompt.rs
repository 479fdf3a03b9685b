use crate::core::text::compact;
use crate::core::{EvaluationRecord, Module, ModuleKind, Trajectory};
use crate::render::fenced_module;
use crate::runtime::eval::render_trajectory;
use crate::runtime::fill_template;

pub const DEFAULT_OPTIMIZER_TEMPLATE: &str = "You improve the {kind} module of an LLM agent. Below is the current module, followed by the agent's trajectories on training tasks and their evaluations. Treat the critiques as textual gradients: analyze the failures, look for patterns, and revise the module so the agent succeeds on these and similar tasks.

## Current module
{module}
{history}
## Instruction
Output the complete improved module inside one fenced block that opens with ```module and closes with ```. Keep everything that already works.";

pub const REPROMPT: &str = "Your reply did not contain a usable module. Output the complete improved module inside one fenced block that opens with ```module and closes with ```.";

/// Trajectory/evaluation pairs shown to the optimizer, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochHistory {
    pub pairs: Vec<(Trajectory, EvaluationRecord)>,
}

impl EpochHistory {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn kind_name(kind: ModuleKind) -> &'static str {
    match kind {
        ModuleKind::Instruction => "instruction",
        ModuleKind::Toolset => "toolset",
    }
}

/// Prompt for one optimizer call. Task blocks are sorted by task id; each
/// shows the query, the compacted trajectory, the verdict and the critique.
pub fn render_optimizer_prompt(
    template: &str,
    module: &Module,
    history: &EpochHistory,
    queries: &dyn Fn(&str) -> Option<String>,
    observation_bytes: usize,
) -> String {
    let mut order: Vec<&(Trajectory, EvaluationRecord)> = history.pairs.iter().collect();
    order.sort_by(|a, b| a.0.task_id.cmp(&b.0.task_id));
    let mut blocks = String::new();
    for (trajectory, record) in order {
        let query = queries(trajectory.task_id.as_str()).unwrap_or_default();
        blocks.push_str(&format!(
            "\n## Task {}\nQuery:\n{}\nTrajectory:\n{}\nVerdict: {} (score {:.2})\nCritique: {}\n",
            trajectory.task_id,
            compact(&query, observation_bytes),
            render_trajectory(trajectory, observation_bytes),
            if record.success { "PASS" } else { "FAIL" },
            record.score,
            if record.critique.is_empty() { "(none)" } else { record.critique.as_str() },
        ));
    }
    fill_template(
        template,
        &[
            ("kind", kind_name(module.kind())),
            ("module", &fenced_module(module)),
            ("history", &blocks),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{EvaluatorKind, Step, TaskId};

    fn pair(id: &str, critique: &str) -> (Trajectory, EvaluationRecord) {
        (
            Trajectory {
                task_id: TaskId::new(id),
                steps: vec![Step {
                    index: 0,
                    observation: "look".into(),
                    action: "final answer: x".into(),
                }],
                final_answer: Some("x".into()),
                truncated: false,
                error: None,
            },
            EvaluationRecord {
                task_id: TaskId::new(id),
                success: false,
                score: 0.0,
                critique: critique.into(),
                evaluator_kind: EvaluatorKind::ExactMatch,
            },
        )
    }

    fn render(h: &EpochHistory) -> String {
        let m = Module::seed_instruction("Be exact.");
        render_optimizer_prompt(DEFAULT_OPTIMIZER_TEMPLATE, &m, h, &|id| Some(format!("query of {id}")), 4_000)
    }

    #[test]
    fn empty_history_has_module_and_instruction_only() {
        let p = render(&EpochHistory::default());
        assert!(p.contains("```module\nBe exact.\n```"));
        assert!(p.contains("## Instruction"));
        assert!(!p.contains("## Task"));
    }

    #[test]
    fn task_blocks_sorted_by_id() {
        let h = EpochHistory {
            pairs: vec![pair("t2", "c2"), pair("t1", "c1")],
        };
        let p = render(&h);
        assert_eq!(p.matches("## Task").count(), 2);
        assert!(p.find("## Task t1").unwrap() < p.find("## Task t2").unwrap());
        assert!(p.contains("Query:\nquery of t1"));
        assert!(p.contains("Verdict: FAIL (score 0.00)\nCritique: c1"));
    }

    #[test]
    fn distinct_critiques_give_distinct_prompts() {
        let a = render(&EpochHistory { pairs: vec![pair("t1", "a")] });
        let b = render(&EpochHistory { pairs: vec![pair("t1", "b")] });
        assert_ne!(a, b);
    }
}
