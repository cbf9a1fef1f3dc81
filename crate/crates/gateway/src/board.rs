//! Hand-off point between the review API and a human-mode loop.
//!
//! The loop publishes an awaiting iteration and blocks; a POST of a valid
//! selection for exactly that iteration wakes it. Each iteration accepts one
//! selection: later posts see it as no longer awaiting.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use planforge_core::optimize::{AwaitingSelection, HumanSelection, OptimizeError, SelectionSource};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A reviewer's decision as posted to the API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiSelection {
    pub run_id: String,
    pub iteration_index: u32,
    pub plan_id: String,
    #[serde(default)]
    pub reviewer_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("iteration {index} of run `{run_id}` is not awaiting a selection")]
    NotAwaiting { run_id: String, index: u32 },
    #[error("`{0}` is not a candidate of this iteration")]
    NotCandidate(String),
}

enum Slot {
    Awaiting(AwaitingSelection),
    Answered(u32, HumanSelection),
}

#[derive(Default)]
pub struct SelectionBoard {
    slots: Mutex<BTreeMap<String, Slot>>,
    changed: Condvar,
    timeout: Option<Duration>,
}

impl SelectionBoard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Gives up waiting after `timeout`.
    pub fn with_timeout(timeout: Duration) -> Self {
        SelectionBoard {
            timeout: Some(timeout),
            ..Self::default()
        }
    }

    /// The iteration currently waiting in `run_id`, if any.
    pub fn awaiting(&self, run_id: &str) -> Option<AwaitingSelection> {
        match self.slots.lock().unwrap().get(run_id) {
            Some(Slot::Awaiting(a)) => Some(a.clone()),
            _ => None,
        }
    }

    pub fn submit(&self, selection: &ApiSelection) -> Result<(), SubmitError> {
        let mut slots = self.slots.lock().unwrap();
        let not_awaiting = || SubmitError::NotAwaiting {
            run_id: selection.run_id.clone(),
            index: selection.iteration_index,
        };
        let Some(Slot::Awaiting(pending)) = slots.get(&selection.run_id) else {
            return Err(not_awaiting());
        };
        if pending.index != selection.iteration_index {
            return Err(not_awaiting());
        }
        if !pending.candidate_ids.contains(&selection.plan_id) {
            return Err(SubmitError::NotCandidate(selection.plan_id.clone()));
        }
        let index = pending.index;
        let answer = HumanSelection {
            plan_id: selection.plan_id.clone(),
            reviewer_note: selection.reviewer_note.clone(),
        };
        slots.insert(selection.run_id.clone(), Slot::Answered(index, answer));
        self.changed.notify_all();
        Ok(())
    }
}

impl SelectionSource for SelectionBoard {
    fn await_selection(&self, run_id: &str, pending: &AwaitingSelection) -> Result<HumanSelection, OptimizeError> {
        let mut slots = self.slots.lock().unwrap();
        slots.insert(run_id.to_string(), Slot::Awaiting(pending.clone()));
        let answered = |slots: &BTreeMap<String, Slot>| {
            matches!(slots.get(run_id), Some(Slot::Answered(i, _)) if *i == pending.index)
        };
        while !answered(&slots) {
            slots = match self.timeout {
                None => self.changed.wait(slots).unwrap(),
                Some(t) => {
                    let (guard, result) = self.changed.wait_timeout(slots, t).unwrap();
                    if result.timed_out() && !answered(&guard) {
                        let mut guard = guard;
                        guard.remove(run_id);
                        return Err(OptimizeError::Selection(format!("no selection within {t:?}")));
                    }
                    guard
                }
            };
        }
        match slots.remove(run_id) {
            Some(Slot::Answered(_, answer)) => Ok(answer),
            _ => unreachable!("checked above"),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use planforge_core::metrics::{BatchCounts, BatchMetrics};

    use super::*;

    fn pending(index: u32) -> AwaitingSelection {
        AwaitingSelection {
            index,
            prompt_digest: "d".into(),
            metrics: BatchMetrics::from_counts(BatchCounts {
                plans: 1,
                delivered: 1,
                ..Default::default()
            })
            .unwrap(),
            candidate_ids: vec!["a".into(), "b".into()],
            rankings: vec![],
        }
    }

    fn sel(index: u32, plan: &str) -> ApiSelection {
        ApiSelection {
            run_id: "r".into(),
            iteration_index: index,
            plan_id: plan.into(),
            reviewer_note: Some("why".into()),
        }
    }

    #[test]
    fn one_selection_per_awaiting_iteration() {
        let board = Arc::new(SelectionBoard::new());
        assert!(matches!(board.submit(&sel(0, "a")), Err(SubmitError::NotAwaiting { .. })));
        let waiter = {
            let board = board.clone();
            std::thread::spawn(move || board.await_selection("r", &pending(0)))
        };
        while board.awaiting("r").is_none() {
            std::thread::yield_now();
        }
        assert_eq!(board.submit(&sel(1, "a")), Err(SubmitError::NotAwaiting { run_id: "r".into(), index: 1 }));
        assert_eq!(board.submit(&sel(0, "zz")), Err(SubmitError::NotCandidate("zz".into())));
        board.submit(&sel(0, "b")).unwrap();
        assert!(matches!(board.submit(&sel(0, "a")), Err(SubmitError::NotAwaiting { .. })));
        let answer = waiter.join().unwrap().unwrap();
        assert_eq!(answer.plan_id, "b");
        assert_eq!(answer.reviewer_note.as_deref(), Some("why"));
        assert!(board.awaiting("r").is_none());
    }

    #[test]
    fn waiting_can_time_out() {
        let board = SelectionBoard::with_timeout(Duration::from_millis(20));
        assert!(matches!(board.await_selection("r", &pending(0)), Err(OptimizeError::Selection(_))));
        assert!(board.awaiting("r").is_none());
    }
}
