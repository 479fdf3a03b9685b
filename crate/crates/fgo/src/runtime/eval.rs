use std::sync::LazyLock;

use regex::Regex;

use super::{fill_template, Environment, Usage};
use crate::core::text::{compact, normalize_answer};
use crate::core::{EvaluationRecord, EvaluatorKind, Task, Trajectory};
use crate::llm::{LlmClient, LlmError, Message, RequestTag};

static VERDICT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^\s*VERDICT:\s*(PASS|FAIL)\s*$").expect("static regex"));

pub const DEFAULT_JUDGE_TEMPLATE: &str = "You are evaluating an agent's attempt at a task. Analyze the trajectory and describe failures, patterns, and potential areas for improvement.

# Task
{task}

# Trajectory
{trajectory}

Reference answer: {label}
Final answer: {answer}

Finish with a line reading exactly \"VERDICT: PASS\" or \"VERDICT: FAIL\". After a failing verdict add \"Critique: <analysis>\".";

const VERDICT_REMINDER: &str =
    "Your reply had no verdict line. Reply again and include a line reading exactly \"VERDICT: PASS\" or \"VERDICT: FAIL\".";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("judge gave no verdict for {task_id} after a reprompt")]
    NoVerdict { task_id: String },
    #[error("judge call failed: {0}")]
    Llm(#[from] LlmError),
    #[error("no tasks to evaluate")]
    NoTasks,
}

/// Observation/action transcript with each observation capped at
/// `max_observation_bytes`.
pub fn render_trajectory(t: &Trajectory, max_observation_bytes: usize) -> String {
    let mut out = String::new();
    for s in &t.steps {
        out.push_str(&format!(
            "[{}] Observation: {}\n[{}] Action: {}\n",
            s.index,
            compact(&s.observation, max_observation_bytes),
            s.index,
            compact(&s.action, max_observation_bytes)
        ));
    }
    if let Some(e) = &t.error {
        out.push_str(&format!("Error: {e}\n"));
    }
    if t.truncated {
        out.push_str("(truncated)\n");
    }
    out.pop();
    out
}

fn answer_text(t: &Trajectory) -> &str {
    t.final_answer.as_deref().unwrap_or("(none)")
}

/// Exact match after whitespace normalization, with an auto-generated
/// critique on failure.
pub fn evaluate_exact(trajectory: &Trajectory, task: &Task) -> EvaluationRecord {
    let success = trajectory
        .final_answer
        .as_deref()
        .is_some_and(|a| normalize_answer(a) == normalize_answer(&task.label));
    EvaluationRecord {
        task_id: task.id.clone(),
        success,
        score: if success { 1.0 } else { 0.0 },
        critique: if success {
            String::new()
        } else {
            format!("expected {}, got {}", normalize_answer(&task.label), answer_text(trajectory))
        },
        evaluator_kind: EvaluatorKind::ExactMatch,
    }
}

/// Environment verdict, falling back to exact match when the environment
/// has no opinion.
pub fn evaluate_oracle(env: &dyn Environment, trajectory: &Trajectory, task: &Task) -> EvaluationRecord {
    let mut record = evaluate_exact(trajectory, task);
    if let Some(success) = env.oracle_check(trajectory, &task.label) {
        record.success = success;
        record.score = if success { 1.0 } else { 0.0 };
        record.critique = if success {
            String::new()
        } else {
            format!("environment rejected the answer {}", answer_text(trajectory))
        };
        record.evaluator_kind = EvaluatorKind::Environment;
    }
    record
}

fn parse_verdict(reply: &str) -> Option<(bool, String)> {
    let verdict = VERDICT.captures_iter(reply).last()?;
    let success = verdict[1].eq_ignore_ascii_case("PASS");
    let analysis = VERDICT.replace_all(reply, "");
    let analysis = match analysis.find("Critique:") {
        Some(i) => analysis[i + "Critique:".len()..].trim().to_string(),
        None => analysis.trim().to_string(),
    };
    Some((success, analysis))
}

/// Asks the model to judge a trajectory. The reply must carry a
/// `VERDICT: PASS|FAIL` line; one reprompt is allowed.
pub fn evaluate_llm(
    trajectory: &Trajectory,
    task: &Task,
    client: &LlmClient,
    template: &str,
) -> Result<(EvaluationRecord, Usage), EvalError> {
    let prompt = fill_template(
        template,
        &[
            ("task", &task.query),
            ("trajectory", &render_trajectory(trajectory, 4_000)),
            ("label", &task.label),
            ("answer", answer_text(trajectory)),
        ],
    );
    let mut messages = vec![Message::user(prompt)];
    let mut usage = Usage::default();
    for attempt in 0..2 {
        let resp = client.complete(&client.request(RequestTag::Evaluate, messages.clone()))?;
        usage.add(Usage {
            prompt_tokens: resp.prompt_tokens,
            completion_tokens: resp.completion_tokens,
            latency_ms: resp.latency_ms.unwrap_or(0),
        });
        if let Some((success, analysis)) = parse_verdict(&resp.content) {
            let critique = if success || !analysis.is_empty() {
                analysis
            } else {
                "the judge marked the attempt as failed without further analysis".into()
            };
            let record = EvaluationRecord {
                task_id: task.id.clone(),
                success,
                score: if success { 1.0 } else { 0.0 },
                critique,
                evaluator_kind: EvaluatorKind::LlmJudge,
            };
            return Ok((record, usage));
        }
        if attempt == 0 {
            messages.push(Message::assistant(resp.content));
            messages.push(Message::user(VERDICT_REMINDER));
        }
    }
    Err(EvalError::NoVerdict {
        task_id: task.id.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{Step, TaskId};
    use crate::llm::{Matcher, MockBackend, Reply, RetryPolicy};
    use std::sync::Arc;

    fn task(label: &str) -> Task {
        Task {
            id: TaskId::new("t1"),
            query: "Extract the reference".into(),
            label: label.into(),
            category: None,
            payload_path: None,
        }
    }

    fn answered(answer: Option<&str>) -> Trajectory {
        Trajectory {
            task_id: TaskId::new("t1"),
            steps: vec![Step {
                index: 0,
                observation: "doc".into(),
                action: "...".into(),
            }],
            final_answer: answer.map(str::to_string),
            truncated: false,
            error: None,
        }
    }

    #[test]
    fn exact_match_normalizes_whitespace() {
        let t = task("847 5321 9084");
        assert!(evaluate_exact(&answered(Some("847 5321 9084")), &t).success);
        let r = evaluate_exact(&answered(Some(" 847  5321 9084 ")), &t);
        assert!(r.success);
        assert_eq!(r.score, 1.0);
        let r = evaluate_exact(&answered(None), &t);
        assert!(!r.success);
        assert_eq!(r.score, 0.0);
        assert_eq!(r.critique, "expected 847 5321 9084, got (none)");
        let r = evaluate_exact(&answered(Some("847 5321")), &t);
        assert_eq!(r.critique, "expected 847 5321 9084, got 847 5321");
    }

    fn judge(reply: &'static str) -> LlmClient {
        LlmClient::new(Arc::new(
            MockBackend::builder()
                .on(RequestTag::Evaluate, Matcher::Any, Reply::Template(reply.into()))
                .build(),
        ))
        .with_retry(RetryPolicy::none())
    }

    #[test]
    fn judge_verdicts() {
        let t = task("x");
        let (r, _) = evaluate_llm(&answered(Some("x")), &t, &judge("VERDICT: PASS"), DEFAULT_JUDGE_TEMPLATE).unwrap();
        assert!(r.success);
        assert_eq!(r.evaluator_kind, EvaluatorKind::LlmJudge);
        let (r, _) =
            evaluate_llm(&answered(Some("y")), &t, &judge("VERDICT: FAIL\nCritique: missed tag"), DEFAULT_JUDGE_TEMPLATE)
                .unwrap();
        assert!(!r.success);
        assert_eq!(r.critique, "missed tag");
        assert!(r.validate().is_empty());
    }

    #[test]
    fn judge_without_verdict_is_an_error() {
        let client = judge("looks fine to me");
        let err = evaluate_llm(&answered(Some("x")), &task("x"), &client, DEFAULT_JUDGE_TEMPLATE).unwrap_err();
        assert!(matches!(err, EvalError::NoVerdict { .. }));
        assert_eq!(client.ledger().calls(RequestTag::Evaluate), 2);
    }
}
