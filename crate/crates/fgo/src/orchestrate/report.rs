use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::core::{MergeTree, PerformanceStats};
use crate::llm::TagTotals;

use super::OrchestrateError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub module_id: String,
    pub successes: u64,
    pub trials: u64,
    pub success_rate: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_clock_ms: u64,
}

impl From<&PerformanceStats> for StatsSummary {
    fn from(s: &PerformanceStats) -> Self {
        StatsSummary {
            module_id: s.module_id.0.clone(),
            successes: s.successes,
            trials: s.trials,
            success_rate: s.success_rate(),
            prompt_tokens: s.prompt_tokens,
            completion_tokens: s.completion_tokens,
            wall_clock_ms: s.wall_clock_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub successes: u64,
    pub trials: u64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub depth: u32,
    pub nodes: usize,
    pub leaves: usize,
    pub fallbacks: usize,
    pub backtest_volume: usize,
    pub level_volumes: Vec<usize>,
}

impl From<&MergeTree> for TreeSummary {
    fn from(t: &MergeTree) -> Self {
        TreeSummary {
            depth: t.internal_depth(),
            nodes: t.nodes.len(),
            leaves: t.leaves().count(),
            fallbacks: t.fallback_count(),
            backtest_volume: t.backtest_volume(),
            level_volumes: t.level_volumes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub module_id: String,
    /// Final-epoch training evaluation, or the root backtest after merging.
    pub train: StatsSummary,
    pub test: StatsSummary,
    pub test_by_category: BTreeMap<String, CategoryScore>,
    /// Per request tag, every call of the strategy including test scoring.
    pub tokens: BTreeMap<String, TagTotals>,
    pub total: TagTotals,
    /// Totals per pipeline phase.
    pub phases: BTreeMap<String, TagTotals>,
    /// Summed model latency.
    pub wall_clock_ms: u64,
    pub optimizer_calls: u64,
    pub trims: usize,
    pub events: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_tree: Option<TreeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentInfo {
    pub name: String,
    pub backend: String,
    pub model: String,
    pub train_tasks: usize,
    pub test_tasks: usize,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub environment: EnvironmentInfo,
    /// The run configuration, without its output location.
    pub config: serde_json::Value,
    pub strategies: Vec<StrategyReport>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestrateError + '_ {
    move |source| OrchestrateError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl RunReport {
    pub fn to_json(&self) -> String {
        codec::to_canonical_json(self).expect("report serializes")
    }

    /// Long-format series for plotting cost against performance: one row
    /// per strategy and series.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["series", "strategy", "x", "y"]).expect("in-memory csv");
        for s in &self.strategies {
            let y = format!("{:.6}", s.test.success_rate);
            let tokens = (s.total.prompt_tokens + s.total.completion_tokens).to_string();
            w.write_record(["tokens_vs_performance", &s.strategy, &tokens, &y])
                .expect("in-memory csv");
            w.write_record(["time_vs_performance", &s.strategy, &s.wall_clock_ms.to_string(), &y])
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    pub fn to_table(&self) -> String {
        let header = [
            "strategy", "train", "test", "prompt tok", "compl. tok", "opt calls", "trims", "depth", "nodes", "fallbacks",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
        for s in &self.strategies {
            let tree = s.merge_tree.as_ref();
            rows.push(vec![
                s.strategy.clone(),
                format!("{}/{} ({:.1}%)", s.train.successes, s.train.trials, 100.0 * s.train.success_rate),
                format!("{}/{} ({:.1}%)", s.test.successes, s.test.trials, 100.0 * s.test.success_rate),
                s.total.prompt_tokens.to_string(),
                s.total.completion_tokens.to_string(),
                s.optimizer_calls.to_string(),
                s.trims.to_string(),
                tree.map_or("-".into(), |t| t.depth.to_string()),
                tree.map_or("-".into(), |t| t.nodes.to_string()),
                tree.map_or("-".into(), |t| t.fallbacks.to_string()),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!(
            "environment: {} ({} train / {} test tasks), backend: {}\n",
            self.environment.name, self.environment.train_tasks, self.environment.test_tasks, self.environment.backend
        );
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
                out.push('\n');
            }
        }
        let cats: Vec<&StrategyReport> = self.strategies.iter().filter(|s| !s.test_by_category.is_empty()).collect();
        if !cats.is_empty() {
            out.push_str("\ntest success by category\n");
            for s in cats {
                let parts: Vec<String> = s
                    .test_by_category
                    .iter()
                    .map(|(c, v)| format!("{c} {}/{}", v.successes, v.trials))
                    .collect();
                out.push_str(&format!("{}: {}\n", s.strategy, parts.join(", ")));
            }
        }
        out
    }

    /// Writes `report.json`, `report.csv` and `report.txt` into `dir`.
    pub fn emit(&self, dir: &Path) -> Result<(), OrchestrateError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, text) in [
            ("report.json", self.to_json()),
            ("report.csv", self.to_csv()),
            ("report.txt", self.to_table()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<RunReport, OrchestrateError> {
        let path = dir.join("report.json");
        codec::read_json(&path).map_err(|e| OrchestrateError::Artifact(e.to_string()))
    }
}
