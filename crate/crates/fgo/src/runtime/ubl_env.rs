//! Invoice reference extraction as an environment: the agent reads one UBL
//! document and answers with its transport reference number.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ubl::synthetic_invoice;
use super::{EnvError, EnvFactory, Environment, StepOutcome};
use crate::core::text::normalize_answer;
use crate::core::{derive_seed, Task, TaskId, TaskSet, Trajectory};

pub const SEED_INSTRUCTION: &str = "# Task background
Read the content of a xml file which contains a shipment invoice document in UBL format. You are tasked to understand the content and extract the transport reference number from it.
When you reach a conclusion, format your answer as \"final answer: [extracted reference number]\"";

pub const TASK_QUERY: &str = "Extract the transport reference number from the invoice document.";

/// One line of a labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub task_id: String,
    pub reference: String,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Label { path: String, line: usize, message: String },
    #[error("document for task {task_id} not found at {path}")]
    MissingDocument { task_id: String, path: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LoadError + '_ {
    move |source| LoadError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Tasks from `<documents>/<task_id>.xml` and a JSON Lines labels file, in
/// labels-file order.
pub fn load_tasks(name: &str, documents: &Path, labels: &Path) -> Result<TaskSet, LoadError> {
    let file = fs::File::open(labels).map_err(io_err(labels))?;
    let mut tasks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(labels))?;
        if line.trim().is_empty() {
            continue;
        }
        let label: Label = serde_json::from_str(&line).map_err(|e| LoadError::Label {
            path: labels.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let doc = documents.join(format!("{}.xml", label.task_id));
        if !doc.is_file() {
            return Err(LoadError::MissingDocument {
                task_id: label.task_id,
                path: doc.display().to_string(),
            });
        }
        tasks.push(Task {
            id: TaskId(label.task_id),
            query: TASK_QUERY.to_string(),
            label: label.reference,
            category: None,
            payload_path: Some(doc.display().to_string()),
        });
    }
    Ok(TaskSet::new(name, tasks))
}

/// Writes `count` synthetic invoices and their labels under `dir`
/// (`documents/` and `labels.jsonl`).
pub fn write_corpus(dir: &Path, prefix: &str, count: usize, line_items: usize, seed: u64) -> Result<(PathBuf, PathBuf), LoadError> {
    let documents = dir.join("documents");
    fs::create_dir_all(&documents).map_err(io_err(&documents))?;
    let mut labels = String::new();
    for i in 0..count {
        let task_seed = derive_seed(seed, prefix, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
        let reference = format!(
            "{:03} {:04} {:04}",
            rng.gen_range(100..1000),
            rng.gen_range(0..10_000),
            rng.gen_range(0..10_000)
        );
        let task_id = format!("{prefix}-{i:04}");
        let doc = synthetic_invoice(&task_id, &reference, line_items, task_seed);
        let path = documents.join(format!("{task_id}.xml"));
        fs::write(&path, doc).map_err(io_err(&path))?;
        labels.push_str(&serde_json::to_string(&Label { task_id, reference }).expect("label serializes"));
        labels.push('\n');
    }
    let labels_path = dir.join("labels.jsonl");
    fs::write(&labels_path, labels).map_err(io_err(&labels_path))?;
    Ok((documents, labels_path))
}

pub struct UblEnv {
    state: Option<bool>,
}

impl Environment for UblEnv {
    fn reset(&mut self, task: &Task) -> Result<String, EnvError> {
        let path = task
            .payload_path
            .as_deref()
            .ok_or_else(|| EnvError::Task(format!("task {} has no document", task.id)))?;
        let doc = fs::read_to_string(path).map_err(|e| EnvError::Fault(format!("{path}: {e}")))?;
        self.state = Some(false);
        Ok(doc)
    }

    fn step(&mut self, _action: &str) -> Result<StepOutcome, EnvError> {
        match self.state {
            None => Err(EnvError::NotReset),
            Some(true) => Err(EnvError::Finished),
            Some(false) => {
                self.state = Some(true);
                Ok(StepOutcome {
                    observation: "Answer recorded.".into(),
                    terminal: true,
                })
            }
        }
    }

    fn oracle_check(&self, trajectory: &Trajectory, label: &str) -> Option<bool> {
        Some(
            trajectory
                .final_answer
                .as_deref()
                .is_some_and(|a| normalize_answer(a) == normalize_answer(label)),
        )
    }
}

pub struct UblFactory;

impl EnvFactory for UblFactory {
    fn name(&self) -> &str {
        "ubl"
    }

    fn create(&self) -> Box<dyn Environment> {
        Box::new(UblEnv { state: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (docs, labels) = write_corpus(dir.path(), "inv", 3, 2, 9).unwrap();
        let ts = load_tasks("train", &docs, &labels).unwrap();
        assert_eq!(ts.len(), 3);
        let mut env = UblFactory.create();
        let doc = env.reset(&ts.tasks[1]).unwrap();
        assert!(doc.contains(&ts.tasks[1].label));
        assert!(env.step("final answer: x").unwrap().terminal);
        fs::remove_file(docs.join("inv-0002.xml")).unwrap();
        assert!(matches!(load_tasks("t", &docs, &labels), Err(LoadError::MissingDocument { .. })));
    }
}
