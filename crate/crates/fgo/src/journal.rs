//! Notable events of a run, kept for the report.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::core::{ModuleId, TaskId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    /// A trajectory/evaluation pair dropped to fit the optimizer's context.
    Trim {
        scope: String,
        step: u32,
        dropped: TaskId,
        remaining: usize,
    },
    /// The optimizer reply held no usable module; the previous one was kept.
    KeptPrevious { scope: String, step: u32, reason: String },
    MergeFallback {
        node: String,
        chosen: ModuleId,
        reason: String,
    },
    PairwiseMerge { node: String, members: usize },
    RolloutError {
        scope: String,
        task_id: TaskId,
        message: String,
    },
    BootstrapBatch {
        scope: String,
        step: u32,
        task_ids: Vec<TaskId>,
    },
}

impl JournalEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            JournalEvent::Trim { .. } => "trim",
            JournalEvent::KeptPrevious { .. } => "kept_previous",
            JournalEvent::MergeFallback { .. } => "merge_fallback",
            JournalEvent::PairwiseMerge { .. } => "pairwise_merge",
            JournalEvent::RolloutError { .. } => "rollout_error",
            JournalEvent::BootstrapBatch { .. } => "bootstrap_batch",
        }
    }
}

/// Thread-safe event sink. Events from concurrent workers arrive in any
/// order; [`Journal::sorted`] gives a canonical order for reports.
#[derive(Default)]
pub struct Journal {
    events: Mutex<Vec<JournalEvent>>,
}

impl Journal {
    pub fn new() -> Self {
        Self::default()
    }

    /// A journal holding `events` as recorded earlier, without logging
    /// them again.
    pub fn from_events(events: Vec<JournalEvent>) -> Self {
        Journal {
            events: Mutex::new(events),
        }
    }

    pub fn push(&self, event: JournalEvent) {
        match &event {
            JournalEvent::Trim { .. } | JournalEvent::BootstrapBatch { .. } => log::debug!("{event:?}"),
            _ => log::warn!("{event:?}"),
        }
        self.events.lock().expect("journal poisoned").push(event);
    }

    pub fn events(&self) -> Vec<JournalEvent> {
        self.events.lock().expect("journal poisoned").clone()
    }

    pub fn sorted(&self) -> Vec<JournalEvent> {
        let mut keyed: Vec<(String, JournalEvent)> = self
            .events()
            .into_iter()
            .map(|e| (serde_json::to_string(&e).expect("events serialize"), e))
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        keyed.into_iter().map(|(_, e)| e).collect()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.events
            .lock()
            .expect("journal poisoned")
            .iter()
            .filter(|e| e.kind() == kind)
            .count()
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in self.events.lock().expect("journal poisoned").iter() {
            *out.entry(e.kind().to_string()).or_insert(0) += 1;
        }
        out
    }
}
