use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::RequestTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub seq: u64,
    pub tag: RequestTag,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_clock_ms: u64,
}

impl TagTotals {
    fn add(&mut self, e: &LedgerEvent) {
        self.calls += 1;
        self.prompt_tokens += e.prompt_tokens;
        self.completion_tokens += e.completion_tokens;
        self.wall_clock_ms += e.wall_clock_ms;
    }

    pub fn merged(mut self, other: &TagTotals) -> TagTotals {
        self.calls += other.calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.wall_clock_ms += other.wall_clock_ms;
        self
    }
}

#[derive(Default)]
struct State {
    events: Vec<LedgerEvent>,
    totals: BTreeMap<RequestTag, TagTotals>,
}

/// Append-only record of every completed call. Totals and the event log
/// are updated under one lock so they can never disagree.
#[derive(Default)]
pub struct TokenLedger {
    state: Mutex<State>,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: impl IntoIterator<Item = LedgerEvent>) -> Self {
        let ledger = TokenLedger::new();
        for e in events {
            ledger.record(e.tag, e.prompt_tokens, e.completion_tokens, e.wall_clock_ms);
        }
        ledger
    }

    pub fn record(&self, tag: RequestTag, prompt_tokens: u64, completion_tokens: u64, wall_clock_ms: u64) -> LedgerEvent {
        let mut s = self.state.lock().expect("ledger poisoned");
        let event = LedgerEvent {
            seq: s.events.len() as u64,
            tag,
            prompt_tokens,
            completion_tokens,
            wall_clock_ms,
        };
        s.totals.entry(tag).or_default().add(&event);
        s.events.push(event);
        event
    }

    pub fn events(&self) -> Vec<LedgerEvent> {
        self.state.lock().expect("ledger poisoned").events.clone()
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("ledger poisoned").events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-tag totals; every tag is present, zero when unused.
    pub fn totals(&self) -> BTreeMap<RequestTag, TagTotals> {
        let s = self.state.lock().expect("ledger poisoned");
        RequestTag::ALL
            .iter()
            .map(|t| (*t, s.totals.get(t).copied().unwrap_or_default()))
            .collect()
    }

    pub fn tag_totals(&self, tag: RequestTag) -> TagTotals {
        self.state
            .lock()
            .expect("ledger poisoned")
            .totals
            .get(&tag)
            .copied()
            .unwrap_or_default()
    }

    pub fn calls(&self, tag: RequestTag) -> u64 {
        self.tag_totals(tag).calls
    }

    pub fn total(&self) -> TagTotals {
        self.totals()
            .values()
            .fold(TagTotals::default(), |acc, t| acc.merged(t))
    }

    /// Per-tag totals recomputed from an event log.
    pub fn fold(events: &[LedgerEvent]) -> BTreeMap<RequestTag, TagTotals> {
        let mut out: BTreeMap<RequestTag, TagTotals> =
            RequestTag::ALL.iter().map(|t| (*t, TagTotals::default())).collect();
        for e in events {
            out.entry(e.tag).or_default().add(e);
        }
        out
    }

    /// Running totals agree with the fold of the log and sequence numbers
    /// are dense.
    pub fn is_conserved(&self) -> bool {
        let (events, totals) = {
            let s = self.state.lock().expect("ledger poisoned");
            (s.events.clone(), s.totals.clone())
        };
        let dense = events.iter().enumerate().all(|(i, e)| e.seq == i as u64);
        let folded = Self::fold(&events);
        dense
            && RequestTag::ALL
                .iter()
                .all(|t| totals.get(t).copied().unwrap_or_default() == folded[t])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_additive() {
        let l = TokenLedger::new();
        l.record(RequestTag::Optimize, 10, 2, 1);
        l.record(RequestTag::Optimize, 5, 1, 1);
        l.record(RequestTag::AgentStep, 7, 3, 0);
        let opt = l.tag_totals(RequestTag::Optimize);
        assert_eq!((opt.calls, opt.prompt_tokens, opt.completion_tokens), (2, 15, 3));
        assert_eq!(l.total().prompt_tokens, 22);
        assert_eq!(l.totals()[&RequestTag::Merge], TagTotals::default());
        assert!(l.is_conserved());
        assert_eq!(TokenLedger::fold(&l.events()), l.totals());
    }

    #[test]
    fn rebuilt_ledger_matches() {
        let l = TokenLedger::new();
        l.record(RequestTag::Merge, 1, 2, 3);
        l.record(RequestTag::Evaluate, 4, 5, 6);
        let copy = TokenLedger::from_events(l.events());
        assert_eq!(copy.events(), l.events());
        assert_eq!(copy.totals(), l.totals());
    }
}
