//! Ready-made mock scripts for the built-in environments.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::mock::{Matcher, MockBuilder, Reply};
use super::{ChatRequest, MockBackend, RequestTag};
use crate::core::text::fenced_blocks;

static TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"RULE-[a-z_]+-[0-9a-f]{6}").expect("static regex"));
static CATEGORY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^Category: ([a-z_]+)\s*$").expect("static regex"));
static REFERENCE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d{3} \d{4} \d{4}\b").expect("static regex"));
static JUDGE_FIELDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Reference answer: (.*)$\n^Final answer: (.*)$").expect("static regex"));

const RULE_PREFIX: &str = "Rule: ";

/// How the scripted optimizer treats rules it already holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMemory {
    /// Keeps every rule ever learned.
    Cumulative,
    /// Keeps at most this many rules, dropping the oldest.
    Fifo(usize),
    /// Keeps only rules seen in the current history.
    LastBatch,
}

fn split_module(body: &str) -> (Vec<&str>, Vec<String>) {
    let mut base = Vec::new();
    let mut rules = Vec::new();
    for line in body.lines() {
        match line.strip_prefix(RULE_PREFIX).filter(|t| TOKEN.is_match(t)) {
            Some(t) => rules.push(t.trim().to_string()),
            None => base.push(line),
        }
    }
    (base, rules)
}

fn render_module(base: &[&str], rules: &[String]) -> String {
    let mut lines: Vec<String> = base.iter().map(|s| s.to_string()).collect();
    lines.extend(rules.iter().map(|r| format!("{RULE_PREFIX}{r}")));
    format!("```module\n{}\n```", lines.join("\n"))
}

fn module_blocks(prompt: &str) -> Vec<String> {
    fenced_blocks(prompt)
        .into_iter()
        .filter(|b| b.info == "module")
        .map(|b| b.body)
        .collect()
}

fn rule_agent(req: &ChatRequest) -> Result<String, String> {
    let prompt = req.rendered();
    let Some(cat) = CATEGORY.captures_iter(&prompt).last().map(|c| c[1].to_string()) else {
        return Ok("final answer: unknown".into());
    };
    let wanted = format!("RULE-{cat}-");
    let found = TOKEN
        .find_iter(&prompt)
        .map(|m| m.as_str())
        .find(|t| t.starts_with(&wanted) && !t[wanted.len()..].contains('-'));
    Ok(format!("final answer: {}", found.unwrap_or("unknown")))
}

fn rule_optimizer(memory: OptimizerMemory) -> impl Fn(&ChatRequest) -> Result<String, String> + Send + Sync {
    move |req| {
        let prompt = req.rendered();
        let current = module_blocks(&prompt)
            .into_iter()
            .next()
            .ok_or("optimizer prompt has no module block")?;
        let history = prompt.replacen(&current, "", 1);
        let (base, mut rules) = split_module(&current);
        if memory == OptimizerMemory::LastBatch {
            rules.clear();
        }
        for t in TOKEN.find_iter(&history) {
            let t = t.as_str().to_string();
            if !rules.contains(&t) {
                rules.push(t);
            }
        }
        if let OptimizerMemory::Fifo(cap) = memory {
            let excess = rules.len().saturating_sub(cap);
            rules.drain(..excess);
        }
        Ok(render_module(&base, &rules))
    }
}

fn rule_merger(req: &ChatRequest) -> Result<String, String> {
    let prompt = req.rendered();
    let blocks = module_blocks(&prompt);
    let first = blocks.first().ok_or("merge prompt has no module blocks")?;
    let (base, _) = split_module(first);
    let mut rules: Vec<String> = Vec::new();
    for b in &blocks {
        for r in split_module(b).1 {
            if !rules.contains(&r) {
                rules.push(r);
            }
        }
    }
    Ok(render_module(&base, &rules))
}

fn judge(req: &ChatRequest) -> Result<String, String> {
    let prompt = req.rendered();
    let c = JUDGE_FIELDS
        .captures_iter(&prompt)
        .last()
        .ok_or("judge prompt lacks reference/final answer lines")?;
    let (reference, answer) = (c[1].trim(), c[2].trim());
    if crate::core::text::normalize_answer(reference) == crate::core::text::normalize_answer(answer) {
        Ok("The answer matches the reference.\nVERDICT: PASS".into())
    } else {
        Ok(format!("VERDICT: FAIL\nCritique: the agent answered {answer:?} but the task needed {reference:?}."))
    }
}

fn echo_module(req: &ChatRequest) -> Result<String, String> {
    let prompt = req.rendered();
    let first = module_blocks(&prompt)
        .into_iter()
        .next()
        .ok_or("prompt has no module block")?;
    Ok(format!("```module\n{first}\n```"))
}

/// Script for the rule environment: the agent answers with the rule token
/// for its category when the prompt holds one, the optimizer learns tokens
/// revealed in critiques, the merger takes the union of member rules.
pub fn rule_world(memory: OptimizerMemory) -> MockBuilder {
    MockBackend::builder()
        .on(RequestTag::AgentStep, Matcher::Any, Reply::func(rule_agent))
        .on(RequestTag::Optimize, Matcher::Any, Reply::func(rule_optimizer(memory)))
        .on(RequestTag::Merge, Matcher::Any, Reply::func(rule_merger))
        .on(RequestTag::Evaluate, Matcher::Any, Reply::func(judge))
}

/// Script for the invoice environment: the agent reports the first
/// `ddd dddd dddd` number it sees; optimizer and merger echo the first
/// module they are shown.
pub fn ubl() -> MockBuilder {
    MockBackend::builder()
        .on(
            RequestTag::AgentStep,
            Matcher::Any,
            Reply::func(|req| {
                let prompt = req.rendered();
                let found = REFERENCE.find(&prompt).map(|m| m.as_str()).unwrap_or("unknown");
                Ok(format!("final answer: {found}"))
            }),
        )
        .on(RequestTag::Optimize, Matcher::Any, Reply::func(echo_module))
        .on(RequestTag::Merge, Matcher::Any, Reply::func(echo_module))
        .on(RequestTag::Evaluate, Matcher::Any, Reply::func(judge))
}

pub fn rule_tokens(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for m in TOKEN.find_iter(text) {
        if !out.iter().any(|t| t == m.as_str()) {
            out.push(m.as_str().to_string());
        }
    }
    out
}
