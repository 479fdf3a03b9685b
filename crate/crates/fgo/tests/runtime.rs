mod common;

use std::path::PathBuf;
use std::sync::Arc;

use fgo::core::text::estimate_tokens;
use fgo::core::{EvaluatorKind, Module, Task, TaskId, Trajectory};
use fgo::llm::presets::{self, OptimizerMemory};
use fgo::llm::{LlmClient, Matcher, MockBackend, Reply, RequestTag};
use fgo::runtime::rule_world::{Layout, RuleWorldFactory, RuleWorldSpec, SEED_INSTRUCTION};
use fgo::runtime::ubl::{parse_ubl_invoice, synthetic_invoice, SAMPLE_INVOICE, SAMPLE_REFERENCE};
use fgo::runtime::ubl_env::{UblFactory, TASK_QUERY};
use fgo::runtime::{evaluate_exact, evaluate_llm, rollout, EvalError, RolloutConfig, Runner, DEFAULT_JUDGE_TEMPLATE};

fn rule_runner(min_steps: u32) -> Runner {
    let client = LlmClient::new(Arc::new(presets::rule_world(OptimizerMemory::Cumulative).build()));
    Runner::new(client, Arc::new(RuleWorldFactory { min_steps }))
}

fn with_rules(spec: &RuleWorldSpec, categories: &[&str]) -> Module {
    let mut text = SEED_INSTRUCTION.to_string();
    for c in categories {
        text.push_str(&format!("\nRule: {}", spec.token(c).unwrap()));
    }
    Module::seed_instruction(text)
}

fn trajectory(answer: Option<&str>) -> Trajectory {
    Trajectory {
        task_id: TaskId("t".into()),
        steps: Vec::new(),
        final_answer: answer.map(str::to_string),
        truncated: false,
        error: None,
    }
}

fn labelled(label: &str) -> Task {
    Task {
        id: TaskId("t".into()),
        query: "q".into(),
        label: label.into(),
        category: None,
        payload_path: None,
    }
}

#[test]
fn module_with_the_rule_solves_in_one_step() {
    let spec = RuleWorldSpec::standard(1);
    let tasks = spec.tasks("t", "t", 6, Layout::RoundRobin, 2);
    let runner = rule_runner(1);
    let module = with_rules(&spec, &["heat"]);
    let heat = tasks.tasks.iter().find(|t| t.category.as_deref() == Some("heat")).unwrap();
    let r = runner.run_task(&module, heat, "test").unwrap();
    assert_eq!(r.trajectory.steps.len(), 1);
    assert_eq!(r.trajectory.final_answer.as_deref(), spec.token("heat"));
    assert!(!r.trajectory.truncated);
    assert!(r.record.success);

    let pick = tasks.tasks.iter().find(|t| t.category.as_deref() == Some("pick")).unwrap();
    let miss = runner.run_task(&module, pick, "test").unwrap();
    assert!(!miss.record.success);
    assert!(miss.record.critique.contains(spec.token("pick").unwrap()));
}

#[test]
fn step_budget_truncates() {
    let spec = RuleWorldSpec::standard(1);
    let task = &spec.tasks("t", "t", 1, Layout::RoundRobin, 2).tasks[0];
    let client = LlmClient::new(Arc::new(presets::rule_world(OptimizerMemory::Cumulative).build()));
    let cfg = RolloutConfig {
        max_steps: 1,
        ..RolloutConfig::default()
    };
    let mut env = fgo::runtime::rule_world::RuleWorldEnv::new(2);
    let r = rollout(&with_rules(&spec, &["pick"]), task, &mut env, &cfg, &client).unwrap();
    assert!(r.trajectory.truncated);
    assert_eq!(r.trajectory.steps.len(), 1);
    assert_eq!(client.ledger().calls(RequestTag::AgentStep), 1);
}

#[test]
fn seed_module_fails_everywhere_and_full_module_succeeds_everywhere() {
    let spec = RuleWorldSpec::standard(4);
    let tasks = spec.tasks("t", "t", 24, Layout::RoundRobin, 5);
    let runner = rule_runner(1);
    let (seed, _) = runner.evaluate(&Module::seed_instruction(SEED_INSTRUCTION), &tasks.tasks, "s").unwrap();
    assert_eq!((seed.successes, seed.trials), (0, 24));
    let all: Vec<&str> = spec.rules.iter().map(|r| r.category.as_str()).collect();
    let (full, results) = runner.evaluate(&with_rules(&spec, &all), &tasks.tasks, "s").unwrap();
    assert_eq!((full.successes, full.trials), (24, 24));
    let order: Vec<&TaskId> = results.iter().map(|r| &r.record.task_id).collect();
    assert_eq!(order, tasks.ids().collect::<Vec<_>>());
    assert!(matches!(runner.evaluate(&with_rules(&spec, &all), &[], "s"), Err(EvalError::NoTasks)));
}

#[test]
fn rollout_errors_become_failures_and_are_journaled() {
    let runner = rule_runner(1);
    let mut task = labelled("x");
    task.category = None;
    let r = runner.run_task(&Module::seed_instruction("m"), &task, "scope").unwrap();
    assert!(!r.record.success);
    assert!(r.trajectory.error.is_some());
    assert_eq!(runner.journal.count("rollout_error"), 1);
}

fn sample_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/ubl_sample.xml")
}

#[test]
fn invoice_agent_reports_the_reference() {
    let client = LlmClient::new(Arc::new(presets::ubl().build()));
    let runner = Runner::new(client, Arc::new(UblFactory));
    let task = Task {
        id: TaskId("sample".into()),
        query: TASK_QUERY.into(),
        label: SAMPLE_REFERENCE.into(),
        category: None,
        payload_path: Some(sample_path().display().to_string()),
    };
    let r = runner.run_task(&Module::seed_instruction("Find the reference."), &task, "ubl").unwrap();
    assert_eq!(r.trajectory.steps[0].action, "final answer: 847 5321 9084");
    assert_eq!(r.trajectory.final_answer.as_deref(), Some("847 5321 9084"));
    assert!(r.record.success);
}

#[test]
fn checked_in_sample_is_the_listing() {
    assert_eq!(std::fs::read_to_string(sample_path()).unwrap(), SAMPLE_INVOICE);
    let record = parse_ubl_invoice(SAMPLE_INVOICE.as_bytes()).unwrap();
    assert!(record.is_ubl);
    assert!(record.notes.iter().any(|n| n.contains("HADIMKOY BRANCH 847 5321 9084")));
    for span in &record.spans {
        assert_eq!(&SAMPLE_INVOICE[span.start..span.end].trim(), &span.text.trim(), "{}", span.path);
    }
}

#[test]
fn malformed_documents_yield_positioned_errors() {
    let corpus = common::malformed(SAMPLE_INVOICE);
    assert_eq!(corpus.len(), 20);
    for (name, doc) in corpus {
        let err = parse_ubl_invoice(&doc).expect_err(name);
        assert!(err.line >= 1 && err.column >= 1, "{name}: {err}");
        assert!(err.offset <= doc.len(), "{name}");
        assert!(err.to_string().starts_with(&format!("line {}, column {}", err.line, err.column)), "{name}: {err}");
    }
}

#[test]
fn long_invoice_lands_in_the_reported_token_band() {
    let doc = (1..200)
        .map(|items| synthetic_invoice("inv-1", "123 4567 8901", items, 3))
        .find(|d| d.lines().count() >= 300)
        .unwrap();
    let tokens = estimate_tokens(&doc);
    assert!((2_000..=4_000).contains(&tokens), "{} lines, {tokens} tokens", doc.lines().count());
    assert!(parse_ubl_invoice(doc.as_bytes()).unwrap().flattened().contains("123 4567 8901"));
}

#[test]
fn exact_match_examples() {
    let label = labelled("847 5321 9084");
    assert!(evaluate_exact(&trajectory(Some("847 5321 9084")), &label).success);
    assert!(evaluate_exact(&trajectory(Some(" 847  5321 9084 ")), &label).success);
    let missing = evaluate_exact(&trajectory(None), &label);
    assert!(!missing.success);
    assert_eq!(missing.score, 0.0);
    assert_eq!(missing.evaluator_kind, EvaluatorKind::ExactMatch);
}

fn judge(reply: &str) -> LlmClient {
    let mock = MockBackend::builder()
        .on(RequestTag::Evaluate, Matcher::Any, Reply::Template(reply.into()))
        .build();
    LlmClient::new(Arc::new(mock))
}

#[test]
fn judge_examples() {
    let t = trajectory(Some("x"));
    let task = labelled("y");
    let (pass, _) = evaluate_llm(&t, &task, &judge("VERDICT: PASS"), DEFAULT_JUDGE_TEMPLATE).unwrap();
    assert!(pass.success);
    let (fail, _) = evaluate_llm(&t, &task, &judge("VERDICT: FAIL\nCritique: missed tag"), DEFAULT_JUDGE_TEMPLATE).unwrap();
    assert!(!fail.success);
    assert!(fail.critique.contains("missed tag"));
    let client = judge("I am not sure.");
    assert!(evaluate_llm(&t, &task, &client, DEFAULT_JUDGE_TEMPLATE).is_err());
    assert_eq!(client.ledger().calls(RequestTag::Evaluate), 2);
}
