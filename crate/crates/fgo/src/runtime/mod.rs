//! Agent rollouts against pluggable environments, and trajectory scoring.

pub mod eval;
pub mod rule_world;
pub mod ubl;
pub mod ubl_env;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::core::text::{estimate_tokens, extract_final_answer};
use crate::core::{EvaluationRecord, EvaluatorKind, Module, PerformanceStats, Step, Task, Trajectory};
use crate::journal::{Journal, JournalEvent};
use crate::llm::{LlmClient, LlmError, Message, RequestTag};
use crate::pool::map_ordered;
use crate::render::module_text;

pub use eval::{evaluate_exact, evaluate_llm, evaluate_oracle, EvalError, DEFAULT_JUDGE_TEMPLATE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub observation: String,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("step called before reset")]
    NotReset,
    #[error("step called after the episode ended")]
    Finished,
    #[error("environment cannot run this task: {0}")]
    Task(String),
    #[error("environment fault: {0}")]
    Fault(String),
}

/// An interactive task environment. One instance serves one rollout at a
/// time; [`EnvFactory`] hands out fresh instances to concurrent workers.
pub trait Environment: Send {
    /// Starts an episode and returns the first observation.
    fn reset(&mut self, task: &Task) -> Result<String, EnvError>;

    fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError>;

    /// Deterministic verdict when the environment can judge by itself.
    fn oracle_check(&self, trajectory: &Trajectory, label: &str) -> Option<bool>;
}

pub trait EnvFactory: Send + Sync {
    fn name(&self) -> &str;

    fn create(&self) -> Box<dyn Environment>;
}

pub const DEFAULT_AGENT_TEMPLATE: &str = "{module}

# Task
{task}

# History
{history}

# Observation
{observation}

Reply with your next action. When you reach a conclusion, write it on its own line as \"final answer: <answer>\".";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub max_steps: u32,
    /// Agent prompts are kept under this estimate by dropping the oldest
    /// history steps.
    pub max_prompt_tokens: usize,
    /// Placeholders: `{module}`, `{task}`, `{history}`, `{observation}`.
    pub agent_prompt_template: String,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            max_steps: 30,
            max_prompt_tokens: 32_000,
            agent_prompt_template: DEFAULT_AGENT_TEMPLATE.to_string(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps == 0 {
            return Err("rollout.max_steps must be at least 1".into());
        }
        Ok(())
    }
}

/// Substitutes `{name}` placeholders in one pass, so substituted text is
/// never rescanned.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (key, value) in values {
            let len = key.len() + 2;
            if tail.len() >= len && tail.as_bytes()[len - 1] == b'}' && &tail[1..len - 1] == *key {
                out.push_str(value);
                rest = &tail[len..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

fn render_history(steps: &[Step]) -> String {
    if steps.is_empty() {
        return "(none)".into();
    }
    let mut out = String::new();
    for s in steps {
        out.push_str(&format!("[{}] Observation: {}\n[{}] Action: {}\n", s.index, s.observation, s.index, s.action));
    }
    out.pop();
    out
}

/// Agent prompt with as much trailing history as fits the budget. The task
/// statement and the current observation are always kept.
pub fn render_agent_prompt(cfg: &RolloutConfig, module: &str, task: &Task, steps: &[Step], observation: &str) -> String {
    let mut from = 0;
    loop {
        let history = render_history(&steps[from..]);
        let prompt = fill_template(
            &cfg.agent_prompt_template,
            &[
                ("module", module),
                ("task", &task.query),
                ("history", &history),
                ("observation", observation),
            ],
        );
        if from == steps.len() || estimate_tokens(&prompt) <= cfg.max_prompt_tokens {
            return prompt;
        }
        from += 1;
    }
}

/// Model cost of some piece of work, as reported by the backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

impl Usage {
    pub fn add(&mut self, other: Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.latency_ms += other.latency_ms;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("rollout of {} failed: {message}", trajectory.task_id)]
pub struct RolloutError {
    /// Steps completed before the failure.
    pub trajectory: Trajectory,
    pub message: String,
    pub usage: Usage,
}

/// Runs one episode: the agent sees the module, the pinned task, recent
/// history and the latest observation, and acts until the environment
/// ends the episode or a budget runs out.
#[allow(clippy::result_large_err)]
pub fn rollout(
    module: &Module,
    task: &Task,
    env: &mut dyn Environment,
    cfg: &RolloutConfig,
    client: &LlmClient,
) -> Result<Rollout, RolloutError> {
    let mut trajectory = Trajectory {
        task_id: task.id.clone(),
        steps: Vec::new(),
        final_answer: None,
        truncated: false,
        error: None,
    };
    let mut usage = Usage::default();
    let fail = |mut trajectory: Trajectory, usage: Usage, message: String| {
        if trajectory.steps.is_empty() {
            trajectory.error = Some(message.clone());
        }
        Err(RolloutError {
            trajectory,
            message,
            usage,
        })
    };
    let mut observation = match env.reset(task) {
        Ok(o) => o,
        Err(e) => return fail(trajectory, usage, e.to_string()),
    };
    let text = module_text(module);
    let mut finished = false;
    for index in 0..cfg.max_steps {
        let prompt = render_agent_prompt(cfg, &text, task, &trajectory.steps, &observation);
        let req = client.request(RequestTag::AgentStep, vec![Message::user(prompt)]);
        let resp = match client.complete(&req) {
            Ok(r) => r,
            Err(LlmError::ContextWindowExceeded(msg)) => {
                trajectory.truncated = true;
                if trajectory.steps.is_empty() {
                    trajectory.error = Some(format!("context window exceeded before the first action: {msg}"));
                }
                return Ok(Rollout { trajectory, usage });
            }
            Err(e) => return fail(trajectory, usage, e.to_string()),
        };
        usage.add(Usage {
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
            latency_ms: resp.latency_ms.unwrap_or(0),
        });
        let action = resp.content;
        if let Some(answer) = extract_final_answer(&action) {
            trajectory.final_answer = Some(answer);
        }
        let outcome = env.step(&action);
        trajectory.steps.push(Step {
            index,
            observation: std::mem::take(&mut observation),
            action,
        });
        match outcome {
            Ok(o) => {
                observation = o.observation;
                if o.terminal {
                    finished = true;
                    break;
                }
            }
            Err(e) => return fail(trajectory, usage, e.to_string()),
        }
    }
    trajectory.truncated = !finished;
    Ok(Rollout { trajectory, usage })
}

/// One task's rollout, verdict and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub trajectory: Trajectory,
    pub record: EvaluationRecord,
    pub usage: Usage,
}

/// Everything needed to roll out and score modules on tasks.
#[derive(Clone)]
pub struct Runner {
    pub client: LlmClient,
    pub env: Arc<dyn EnvFactory>,
    pub rollout: RolloutConfig,
    pub evaluator: EvaluatorKind,
    pub judge_template: String,
    pub journal: Arc<Journal>,
    pub workers: usize,
}

impl Runner {
    pub fn new(client: LlmClient, env: Arc<dyn EnvFactory>) -> Self {
        Runner {
            client,
            env,
            rollout: RolloutConfig::default(),
            evaluator: EvaluatorKind::ExactMatch,
            judge_template: DEFAULT_JUDGE_TEMPLATE.to_string(),
            journal: Arc::new(Journal::new()),
            workers: 8,
        }
    }

    /// Same settings, different client (typically one with its own ledger)
    /// and journal.
    pub fn with_client(&self, client: LlmClient, journal: Arc<Journal>) -> Self {
        Runner {
            client,
            journal,
            ..self.clone()
        }
    }

    /// Rollout plus evaluation. A failed rollout is scored as a failure and
    /// journaled; a judge that cannot produce a verdict is an error.
    pub fn run_task(&self, module: &Module, task: &Task, scope: &str) -> Result<TaskResult, EvalError> {
        let mut env = self.env.create();
        let (trajectory, mut usage, failure) = match rollout(module, task, env.as_mut(), &self.rollout, &self.client) {
            Ok(r) => (r.trajectory, r.usage, None),
            Err(e) => {
                self.journal.push(JournalEvent::RolloutError {
                    scope: scope.to_string(),
                    task_id: task.id.clone(),
                    message: e.message.clone(),
                });
                (e.trajectory, e.usage, Some(e.message))
            }
        };
        let record = if let Some(message) = failure {
            EvaluationRecord {
                task_id: task.id.clone(),
                success: false,
                score: 0.0,
                critique: format!("rollout failed: {message}"),
                evaluator_kind: self.evaluator,
            }
        } else {
            match self.evaluator {
                EvaluatorKind::ExactMatch => evaluate_exact(&trajectory, task),
                EvaluatorKind::Environment => evaluate_oracle(env.as_ref(), &trajectory, task),
                EvaluatorKind::LlmJudge => {
                    let (record, u) = evaluate_llm(&trajectory, task, &self.client, &self.judge_template)?;
                    usage.add(u);
                    record
                }
            }
        };
        Ok(TaskResult {
            trajectory,
            record,
            usage,
        })
    }

    /// Runs every task concurrently; results are in task order.
    pub fn run_tasks(&self, module: &Module, tasks: &[Task], scope: &str) -> Result<Vec<TaskResult>, EvalError> {
        map_ordered(tasks, self.workers, |_, task| self.run_task(module, task, scope))
            .into_iter()
            .collect()
    }

    /// Success counts and cost of `module` on `tasks`.
    pub fn evaluate(&self, module: &Module, tasks: &[Task], scope: &str) -> Result<(PerformanceStats, Vec<TaskResult>), EvalError> {
        if tasks.is_empty() {
            return Err(EvalError::NoTasks);
        }
        let results = self.run_tasks(module, tasks, scope)?;
        Ok((stats_for(module, &results), results))
    }
}

/// Aggregates results; `wall_clock_ms` is the summed model latency the
/// backend reported.
pub fn stats_for(module: &Module, results: &[TaskResult]) -> PerformanceStats {
    let mut usage = Usage::default();
    for r in results {
        usage.add(r.usage);
    }
    PerformanceStats {
        module_id: module.id.clone(),
        task_ids: results.iter().map(|r| r.record.task_id.clone()).collect(),
        successes: results.iter().filter(|r| r.record.success).count() as u64,
        trials: results.len() as u64,
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
        wall_clock_ms: usage.latency_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_fill_is_single_pass() {
        let out = fill_template("{a}-{b}-{c}-{", &[("a", "{b}"), ("b", "x")]);
        assert_eq!(out, "{b}-x-{c}-{");
    }

    #[test]
    fn history_is_trimmed_oldest_first() {
        let task = Task {
            id: crate::core::TaskId::new("t"),
            query: "Q".into(),
            label: "y".into(),
            category: None,
            payload_path: None,
        };
        let steps: Vec<Step> = (0..5)
            .map(|i| Step {
                index: i,
                observation: format!("obs{i} {}", "x".repeat(400)),
                action: format!("act{i}"),
            })
            .collect();
        let cfg = RolloutConfig {
            max_prompt_tokens: 300,
            ..RolloutConfig::default()
        };
        let p = render_agent_prompt(&cfg, "M", &task, &steps, "now");
        assert!(estimate_tokens(&p) <= 300);
        assert!(p.contains("obs4") && !p.contains("obs0"));
        assert!(p.contains("# Task\nQ") && p.contains("now"));
        let tiny = RolloutConfig {
            max_prompt_tokens: 1,
            ..RolloutConfig::default()
        };
        let p = render_agent_prompt(&tiny, "M", &task, &steps, "now");
        assert!(p.contains("# History\n(none)") && p.contains("# Task\nQ"));
    }
}
