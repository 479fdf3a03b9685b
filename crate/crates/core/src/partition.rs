//! The divide step: split a task set into disjoint subsets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::types::{Task, TaskId, TaskSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    #[error("invalid partition: cannot split {tasks} tasks into {parts} subsets")]
    InvalidCount { tasks: usize, parts: usize },
    #[error("tasks without a category: {0:?}")]
    MissingCategory(Vec<TaskId>),
}

/// Sizes of `n` balanced subsets of `len` items; the remainder goes to the
/// lowest-indexed subsets.
pub fn balanced_sizes(len: usize, n: usize) -> Vec<usize> {
    let base = len / n;
    let extra = len % n;
    (0..n).map(|i| base + usize::from(i < extra)).collect()
}

/// Seeded random split into `n` subsets whose sizes differ by at most one.
///
/// Membership comes from a ChaCha8 shuffle of the task positions; inside a
/// subset tasks keep their input order.
pub fn partition_random(ts: &TaskSet, n: usize, seed: u64) -> Result<Vec<TaskSet>, PartitionError> {
    if n == 0 || n > ts.len() {
        return Err(PartitionError::InvalidCount {
            tasks: ts.len(),
            parts: n,
        });
    }
    let mut order: Vec<usize> = (0..ts.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut parts = Vec::with_capacity(n);
    let mut cursor = 0;
    for (i, size) in balanced_sizes(ts.len(), n).into_iter().enumerate() {
        let mut members = order[cursor..cursor + size].to_vec();
        cursor += size;
        members.sort_unstable();
        let tasks = members.into_iter().map(|j| ts.tasks[j].clone()).collect();
        parts.push(TaskSet::new(format!("{}/part-{i}", ts.name), tasks));
    }
    Ok(parts)
}

/// One subset per distinct category, in lexicographic category order.
pub fn partition_category(ts: &TaskSet) -> Result<Vec<TaskSet>, PartitionError> {
    let missing: Vec<TaskId> = ts
        .tasks
        .iter()
        .filter(|t| t.category.is_none())
        .map(|t| t.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(PartitionError::MissingCategory(missing));
    }
    let mut groups: BTreeMap<&str, Vec<Task>> = BTreeMap::new();
    for task in &ts.tasks {
        let cat = task.category.as_deref().unwrap_or_default();
        groups.entry(cat).or_default().push(task.clone());
    }
    Ok(groups
        .into_iter()
        .map(|(cat, tasks)| TaskSet::new(format!("{}/{cat}", ts.name), tasks))
        .collect())
}

/// True iff `parts` are pairwise disjoint and together cover exactly the ids
/// of `original`.
pub fn verify_partition(original: &TaskSet, parts: &[TaskSet]) -> bool {
    let expected: BTreeSet<&TaskId> = original.ids().collect();
    let mut seen = BTreeSet::new();
    for part in parts {
        for id in part.ids() {
            if !seen.insert(id) {
                return false;
            }
        }
    }
    seen == expected
}
