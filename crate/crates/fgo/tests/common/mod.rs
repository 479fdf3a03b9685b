#![allow(dead_code)]

use std::path::Path;

use fgo::core::{Module, ModuleId, Payload, PerformanceStats, Task, TaskId, TaskSet};
use fgo::merge::{GroupMerge, MergeError, MergeOps};
use fgo::orchestrate::RunConfig;
use serde_json::{json, Value};

/// The rule-world setup whose context limit admits about twenty history
/// pairs per optimizer prompt.
pub fn context_limited(out: &Path) -> Value {
    json!({
        "environment": {"kind": "rule_world"},
        "train": {"kind": "rule_world", "count": 60, "prefix": "train", "layout": "grouped"},
        "test": {"kind": "rule_world", "count": 134, "prefix": "test", "layout": "round_robin"},
        "partition": {"mode": "category"},
        "backend": {"kind": "mock", "preset": "rule_world", "memory": {"fifo": 4}, "context_limit": 11700},
        "output_dir": out,
        "seed": 7
    })
}

/// A small, fast rule-world setup.
pub fn small(out: &Path, train: usize, test: usize) -> Value {
    json!({
        "environment": {"kind": "rule_world", "decoy_bytes": 200},
        "train": {"kind": "rule_world", "count": train, "prefix": "train", "layout": "grouped"},
        "test": {"kind": "rule_world", "count": test, "prefix": "test", "layout": "round_robin"},
        "partition": {"mode": "category"},
        "backend": {"kind": "mock", "preset": "rule_world"},
        "output_dir": out,
        "seed": 3
    })
}

pub fn config(value: Value) -> RunConfig {
    serde_json::from_value(value).expect("valid run config")
}

pub fn write_config(dir: &Path, value: &Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

pub fn tasks(prefix: &str, n: usize) -> TaskSet {
    TaskSet::new(
        prefix,
        (0..n)
            .map(|i| Task {
                id: TaskId(format!("{prefix}-{i:04}")),
                query: format!("query {i}"),
                label: format!("label {i}"),
                category: None,
                payload_path: None,
            })
            .collect(),
    )
}

pub fn stats(module: &Module, tasks: &[Task], successes: u64) -> PerformanceStats {
    PerformanceStats {
        module_id: module.id.clone(),
        task_ids: tasks.iter().map(|t| t.id.clone()).collect(),
        successes,
        trials: tasks.len() as u64,
        prompt_tokens: 0,
        completion_tokens: 0,
        wall_clock_ms: 0,
    }
}

/// Merges into a module naming its members; every task of a backtest passes.
#[derive(Default)]
pub struct StubOps {
    pub merges: std::sync::atomic::AtomicUsize,
    pub backtests: std::sync::atomic::AtomicUsize,
}

impl MergeOps for StubOps {
    fn merge(&self, members: &[(Module, PerformanceStats)], _node: &str) -> Result<GroupMerge, MergeError> {
        self.merges.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let lineage: Vec<ModuleId> = members.iter().map(|(m, _)| m.id.clone()).collect();
        let text: Vec<&str> = lineage.iter().map(|id| id.0.as_str()).collect();
        Ok(GroupMerge {
            module: Module::merged(Payload::Instruction(format!("merge of {}", text.join(" "))), lineage),
            fallback: None,
        })
    }

    fn backtest(&self, module: &Module, tasks: &[Task], _node: &str) -> Result<PerformanceStats, MergeError> {
        self.backtests.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Ok(stats(module, tasks, tasks.len() as u64))
    }
}

/// Twenty malformed variants of a well-formed document.
pub fn malformed(doc: &str) -> Vec<(&'static str, Vec<u8>)> {
    let replace = |from: &str, to: &str| {
        assert!(doc.contains(from), "{from}");
        doc.replacen(from, to, 1).into_bytes()
    };
    let cut = |at: usize| doc.as_bytes()[..at].to_vec();
    let tag = doc.find("<cac:Party>").unwrap();
    let mut invalid_utf8 = doc.as_bytes().to_vec();
    invalid_utf8.insert(doc.find("SALE").unwrap(), 0xff);
    vec![
        ("truncated midway", cut(doc.len() / 2)),
        ("truncated after root tag", cut(doc.find("<cbc:UBLVersionID>").unwrap())),
        ("truncated inside a tag name", cut(tag + 4)),
        ("missing root close", replace("</Invoice>", "")),
        ("mismatched close", replace("</cbc:ID>", "</cbc:Id>")),
        ("unterminated attribute", replace("Invoice-2\"", "Invoice-2")),
        ("bare less-than in text", replace("SALE", "SA<LE")),
        ("unknown entity", replace("SALE", "SALE &bogus;")),
        ("bad character reference", replace("SALE", "SALE &#xZZ;")),
        ("second root", format!("{doc}<Invoice></Invoice>").into_bytes()),
        ("malformed comment", replace("<cbc:UBLVersionID>", "<!-- a -- b --><cbc:UBLVersionID>")),
        ("missing open tag", replace("<cbc:Note>", "")),
        ("empty document", Vec::new()),
        ("declaration only", b"<?xml version=\"1.0\"?>\n".to_vec()),
        ("invalid utf-8", invalid_utf8),
        ("unclosed cdata", replace("SALE", "<![CDATA[SALE")),
        ("space before tag name", replace("<cbc:ID>", "< cbc:ID>")),
        ("crossed nesting", replace("SALE", "<a><b>SALE</a></b>")),
        ("attribute without value", replace("<cbc:Note>", "<cbc:Note flag>")),
        ("stray close tag", replace("</cbc:Note>", "</cbc:Note></cbc:Note>")),
    ]
}

pub fn report_schema() -> Value {
    serde_json::from_str(include_str!("../../schema/report.schema.json")).expect("schema is json")
}

/// Schema violations of a report, empty when it is well-formed.
pub fn schema_errors(report: &Value) -> Vec<String> {
    let validator = jsonschema::validator_for(&report_schema()).expect("schema compiles");
    validator.iter_errors(report).map(|e| format!("{} at {}", e, e.instance_path())).collect()
}
