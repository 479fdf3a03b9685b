//! Canonical JSON: sorted object keys, two-space indentation, trailing
//! newline. Every artifact written by the pipeline goes through here so
//! identical values always produce identical bytes.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("cannot serialize: {0}")]
    Serialize(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn sort_keys(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, sort_keys(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

pub fn to_canonical_value<T: Serialize>(value: &T) -> Result<Value, CodecError> {
    let v = serde_json::to_value(value).map_err(|e| CodecError::Serialize(e.to_string()))?;
    Ok(sort_keys(v))
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, CodecError> {
    let v = to_canonical_value(value)?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| CodecError::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Single-line canonical form, for JSON Lines files.
pub fn to_canonical_line<T: Serialize>(value: &T) -> Result<String, CodecError> {
    let v = to_canonical_value(value)?;
    serde_json::to_string(&v).map_err(|e| CodecError::Serialize(e.to_string()))
}

/// Parses JSON, reporting the path of the first offending field.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, CodecError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CodecError::Parse {
            path,
            message: e.inner().to_string(),
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CodecError> {
    let text = fs::read_to_string(path).map_err(|source| CodecError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text).map_err(|e| match e {
        CodecError::Parse { path: field, message } => CodecError::Parse {
            path: format!("{}:{field}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CodecError> {
    let text = to_canonical_json(value)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CodecError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| CodecError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{
        EvaluationRecord, EvaluatorKind, MergeNode, Module, ModuleId, Payload, PerformanceStats, Step, Task,
        TaskId, TaskSet, ToolParam, ToolSpec, Trajectory,
    };
    use proptest::prelude::*;

    fn round_trip<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(value: &T) {
        let text = to_canonical_json(value).unwrap();
        let back: T = from_json(&text).unwrap();
        assert_eq!(&back, value);
        assert_eq!(to_canonical_json(&back).unwrap(), text);
    }

    #[test]
    fn keys_are_sorted() {
        let m = Module::seed_instruction("x");
        let text = to_canonical_json(&m).unwrap();
        let keys: Vec<&str> = text
            .lines()
            .filter_map(|l| l.trim().strip_prefix('"'))
            .filter_map(|l| l.split('"').next())
            .collect();
        assert_eq!(keys, vec!["id", "kind", "lineage", "origin", "payload"]);
    }

    #[test]
    fn merge_node_keeps_child_order() {
        let node = MergeNode {
            node_id: "n".into(),
            module_id: ModuleId("m".into()),
            children: vec!["c".into(), "a".into(), "b".into()],
            covered_task_ids: [TaskId::new("t2"), TaskId::new("t1")].into_iter().collect(),
            backtest: Some(PerformanceStats {
                module_id: ModuleId("m".into()),
                task_ids: vec![TaskId::new("t1"), TaskId::new("t2")],
                successes: 1,
                trials: 2,
                prompt_tokens: 10,
                completion_tokens: 3,
                wall_clock_ms: 0,
            }),
            depth: 0,
            fallback: None,
        };
        round_trip(&node);
        let back: MergeNode = from_json(&to_canonical_json(&node).unwrap()).unwrap();
        assert_eq!(back.children, vec!["c", "a", "b"]);
    }

    #[test]
    fn other_types_round_trip() {
        round_trip(&Trajectory {
            task_id: TaskId::new("t"),
            steps: vec![Step {
                index: 0,
                observation: "o".into(),
                action: "a".into(),
            }],
            final_answer: Some("x".into()),
            truncated: false,
            error: None,
        });
        round_trip(&EvaluationRecord {
            task_id: TaskId::new("t"),
            success: false,
            score: 0.0,
            critique: "expected a, got b".into(),
            evaluator_kind: EvaluatorKind::ExactMatch,
        });
        round_trip(&TaskSet::new(
            "s",
            vec![Task {
                id: TaskId::new("t"),
                query: "q".into(),
                label: "y".into(),
                category: Some("c".into()),
                payload_path: None,
            }],
        ));
    }

    #[test]
    fn truncated_input_is_an_error() {
        let text = to_canonical_json(&Module::seed_instruction("hello")).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(from_json::<Module>(cut), Err(CodecError::Parse { .. })));
    }

    #[test]
    fn errors_name_the_field() {
        let err = from_json::<TaskSet>(r#"{"name":"s","tasks":[{"id":"a","query":"q","label":5}]}"#).unwrap_err();
        assert!(err.to_string().contains("tasks[0].label"), "{err}");
    }

    fn arb_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 _.\n-]{1,40}"
    }

    fn arb_tool() -> impl Strategy<Value = ToolSpec> {
        ("[a-z_][a-z0-9_]{0,8}", arb_text(), proptest::collection::vec(("[a-z]{1,5}", arb_text()), 0..3), arb_text())
            .prop_map(|(name, description, sig, body)| ToolSpec {
                name,
                description,
                signature: sig
                    .into_iter()
                    .map(|(name, description)| ToolParam { name, description })
                    .collect(),
                body,
            })
    }

    fn arb_module() -> impl Strategy<Value = Module> {
        let payload = prop_oneof![
            arb_text().prop_map(Payload::Instruction),
            proptest::collection::vec(arb_tool(), 0..3).prop_map(Payload::Toolset),
        ];
        (payload, 0usize..4).prop_map(|(p, parents)| {
            let ids: Vec<ModuleId> = (0..parents).map(|i| ModuleId(format!("{i:016x}"))).collect();
            match parents {
                0 => Module::seed(p),
                1 => Module::optimized(p, &ids[0]),
                _ => Module::merged(p, ids),
            }
        })
    }

    proptest! {
        #[test]
        fn modules_round_trip(m in arb_module()) {
            let text = to_canonical_json(&m).unwrap();
            let back: Module = from_json(&text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(to_canonical_json(&back).unwrap(), text);
        }

        #[test]
        fn stats_round_trip(s in 0u64..100, extra in 0u64..100, p in 0u64..1_000_000, c in 0u64..1000) {
            let stats = PerformanceStats {
                module_id: ModuleId("abc".into()),
                task_ids: (0..3).map(|i| TaskId(format!("t{i}"))).collect(),
                successes: s,
                trials: s + extra,
                prompt_tokens: p,
                completion_tokens: c,
                wall_clock_ms: 5,
            };
            let back: PerformanceStats = from_json(&to_canonical_json(&stats).unwrap()).unwrap();
            prop_assert_eq!(back, stats);
        }
    }
}
