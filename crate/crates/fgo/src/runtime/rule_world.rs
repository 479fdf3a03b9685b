//! A synthetic environment where each task category has a secret rule
//! token. A task is solved by answering with its category's token, which
//! an agent can only do if the module it runs with contains that token.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, EnvFactory, Environment, StepOutcome};
use crate::core::text::normalize_answer;
use crate::core::{derive_seed, Task, TaskId, TaskSet, Trajectory};

pub const CATEGORIES: [&str; 6] = ["pick", "clean", "heat", "cool", "look", "pick_two"];

pub const SEED_INSTRUCTION: &str = "Answer with the rule token that applies to the task's category.";

const VOCABULARY: [&str; 48] = [
    "shelf", "drawer", "counter", "kettle", "lamp", "window", "towel", "basin", "mug", "plate", "spoon", "fridge",
    "stove", "cabinet", "garden", "ladder", "carpet", "mirror", "candle", "basket", "pillow", "blanket", "bottle",
    "bucket", "sponge", "kitchen", "hallway", "bedroom", "desk", "chair", "table", "napkin", "apple", "bread",
    "potato", "tomato", "lettuce", "egg", "pan", "pot", "knife", "fork", "vase", "book", "box", "key", "remote",
    "cloth",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Contiguous runs of equal size, one run per category in order.
    Grouped,
    /// Category of task `i` is `i mod categories`.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub category: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleWorldSpec {
    pub rules: Vec<Rule>,
    /// Length of the filler text attached to every task query.
    pub decoy_bytes: usize,
    /// Steps an episode lasts.
    pub min_steps: u32,
}

impl RuleWorldSpec {
    pub fn generate(seed: u64, categories: &[&str], decoy_bytes: usize, min_steps: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "rule-world/rules", 0));
        let mut rules: Vec<Rule> = Vec::with_capacity(categories.len());
        for cat in categories {
            let token = loop {
                let t = format!("RULE-{cat}-{:06x}", rng.gen::<u32>() & 0x00ff_ffff);
                if rules.iter().all(|r| r.token != t) {
                    break t;
                }
            };
            rules.push(Rule {
                category: cat.to_string(),
                token,
            });
        }
        RuleWorldSpec {
            rules,
            decoy_bytes,
            min_steps: min_steps.max(1),
        }
    }

    pub fn standard(seed: u64) -> Self {
        Self::generate(seed, &CATEGORIES, 2_000, 1)
    }

    pub fn token(&self, category: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.category == category)
            .map(|r| r.token.as_str())
    }

    fn decoy(&self, seed: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = String::with_capacity(self.decoy_bytes + 16);
        while out.len() < self.decoy_bytes {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(VOCABULARY.choose(&mut rng).expect("vocabulary"));
        }
        out.truncate(self.decoy_bytes);
        if out.ends_with(' ') {
            out.pop();
            out.push('s');
        }
        out
    }

    /// `count` tasks named `<prefix>-0000`, ... whose labels are the rule
    /// tokens of their categories.
    pub fn tasks(&self, name: &str, prefix: &str, count: usize, layout: Layout, seed: u64) -> TaskSet {
        let n = self.rules.len().max(1);
        let tasks = (0..count)
            .map(|i| {
                let rule = &self.rules[match layout {
                    Layout::Grouped => i * n / count,
                    Layout::RoundRobin => i % n,
                }];
                Task {
                    id: TaskId(format!("{prefix}-{i:04}")),
                    query: format!(
                        "Category: {}\nNotes: {}",
                        rule.category,
                        self.decoy(derive_seed(seed, prefix, i as u64))
                    ),
                    label: rule.token.clone(),
                    category: Some(rule.category.clone()),
                    payload_path: None,
                }
            })
            .collect();
        TaskSet::new(name, tasks)
    }

    /// Tokens are distinct and no task text leaks one.
    pub fn check(&self, tasks: &TaskSet) -> Vec<String> {
        let mut out = Vec::new();
        for (i, a) in self.rules.iter().enumerate() {
            if self.rules[..i].iter().any(|b| b.token == a.token) {
                out.push(format!("duplicate token {}", a.token));
            }
        }
        for t in &tasks.tasks {
            if self.rules.iter().any(|r| t.query.contains(&r.token)) {
                out.push(format!("task {} leaks a rule token", t.id));
            }
        }
        out
    }
}

enum State {
    Idle,
    Running(u32),
    Done,
}

pub struct RuleWorldEnv {
    min_steps: u32,
    state: State,
}

impl RuleWorldEnv {
    pub fn new(min_steps: u32) -> Self {
        RuleWorldEnv {
            min_steps: min_steps.max(1),
            state: State::Idle,
        }
    }
}

impl Environment for RuleWorldEnv {
    fn reset(&mut self, task: &Task) -> Result<String, EnvError> {
        if task.category.is_none() {
            return Err(EnvError::Task(format!("task {} has no category", task.id)));
        }
        self.state = State::Running(0);
        Ok("You stand at the rule desk. State the rule token for this task's category.".into())
    }

    fn step(&mut self, _action: &str) -> Result<StepOutcome, EnvError> {
        let taken = match self.state {
            State::Idle => return Err(EnvError::NotReset),
            State::Done => return Err(EnvError::Finished),
            State::Running(n) => n + 1,
        };
        if taken >= self.min_steps {
            self.state = State::Done;
            Ok(StepOutcome {
                observation: "The desk records your answer. The episode is over.".into(),
                terminal: true,
            })
        } else {
            self.state = State::Running(taken);
            Ok(StepOutcome {
                observation: "The desk asks you to confirm your answer.".into(),
                terminal: false,
            })
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

pub struct RuleWorldFactory {
    pub min_steps: u32,
}

impl EnvFactory for RuleWorldFactory {
    fn name(&self) -> &str {
        "rule_world"
    }

    fn create(&self) -> Box<dyn Environment> {
        Box::new(RuleWorldEnv::new(self.min_steps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_layouts() {
        let spec = RuleWorldSpec::standard(11);
        assert_eq!(spec.rules.len(), 6);
        assert!(spec.rules.iter().all(|r| r.token.len() == "RULE--".len() + r.category.len() + 6));
        let train = spec.tasks("train", "train", 60, Layout::Grouped, 1);
        assert!(spec.check(&train).is_empty());
        assert_eq!(train.tasks[9].category.as_deref(), Some("pick"));
        assert_eq!(train.tasks[10].category.as_deref(), Some("clean"));
        assert_eq!(train.tasks[59].category.as_deref(), Some("pick_two"));
        let test = spec.tasks("test", "test", 134, Layout::RoundRobin, 2);
        let per_cat: Vec<usize> = CATEGORIES
            .iter()
            .map(|c| test.tasks.iter().filter(|t| t.category.as_deref() == Some(c)).count())
            .collect();
        assert_eq!(per_cat, vec![23, 23, 22, 22, 22, 22]);
        assert!(train.tasks.iter().all(|t| t.query.len() == "Category: \nNotes: ".len() + t.category.as_ref().unwrap().len() + 2_000));
        assert_eq!(spec.tasks("train", "train", 60, Layout::Grouped, 1), train);
    }

    #[test]
    fn episode_protocol() {
        let spec = RuleWorldSpec::standard(1);
        let task = spec.tasks("s", "t", 1, Layout::Grouped, 0).tasks.remove(0);
        let mut env = RuleWorldEnv::new(2);
        assert_eq!(env.step("x"), Err(EnvError::NotReset));
        env.reset(&task).unwrap();
        assert!(!env.step("x").unwrap().terminal);
        assert!(env.step("x").unwrap().terminal);
        assert_eq!(env.step("x"), Err(EnvError::Finished));
    }
}
