//! Deterministic scripted backend for offline tests.
//!
//! Two matcher kinds: substring matchers are checked in registration order
//! (first registered wins) and persist across requests; sequence replies are
//! consumed in order whenever no substring matcher fires. A request nothing
//! matches returns [`BackendError::MockUnmatched`]. Identical request
//! sequences always yield identical reply sequences.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;

use super::{Backend, BackendError, ChatRequest};

/// What a scripted entry does when it fires.
#[derive(Debug, Clone)]
pub enum MockOutcome {
    Reply(String),
    FailStatus(u16),
    FailMalformed(String),
}

impl MockOutcome {
    fn into_result(self) -> Result<String, BackendError> {
        match self {
            MockOutcome::Reply(text) => Ok(text),
            MockOutcome::FailStatus(code) => Err(BackendError::HttpStatus(code)),
            MockOutcome::FailMalformed(detail) => Err(BackendError::MalformedUpstreamReply(detail)),
        }
    }
}

struct ScriptEntry {
    substring: String,
    outcomes: Vec<MockOutcome>,
    /// Consumed outcome count; the last outcome repeats once exhausted.
    cursor: usize,
    delay: Option<Duration>,
}

#[derive(Default)]
pub struct MockBackend {
    entries: Mutex<Vec<ScriptEntry>>,
    sequence: Mutex<VecDeque<MockOutcome>>,
    requests: Mutex<Vec<String>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a sticky substring matcher; returns its handle.
    pub fn script(&self, substring: &str, reply: &str) -> usize {
        self.script_entry(substring, vec![MockOutcome::Reply(reply.to_string())], None)
    }

    /// Substring matcher whose outcomes fire in order, last one sticky.
    /// Useful for fail-once-then-succeed retry scripts.
    pub fn script_outcomes(&self, substring: &str, outcomes: Vec<MockOutcome>) -> usize {
        self.script_entry(substring, outcomes, None)
    }

    /// Sticky substring matcher that sleeps before replying.
    pub fn script_delayed(&self, substring: &str, reply: &str, delay: Duration) -> usize {
        self.script_entry(
            substring,
            vec![MockOutcome::Reply(reply.to_string())],
            Some(delay),
        )
    }

    pub fn script_entry(
        &self,
        substring: &str,
        outcomes: Vec<MockOutcome>,
        delay: Option<Duration>,
    ) -> usize {
        assert!(!outcomes.is_empty(), "scripted entry needs at least one outcome");
        let mut entries = self.entries.lock().expect("entries lock");
        entries.push(ScriptEntry {
            substring: substring.to_string(),
            outcomes,
            cursor: 0,
            delay,
        });
        entries.len() - 1
    }

    /// Queues a reply consumed by the next otherwise-unmatched request.
    pub fn script_next(&self, reply: &str) {
        self.script_next_outcome(MockOutcome::Reply(reply.to_string()));
    }

    /// Queues an arbitrary outcome on the sequence matcher.
    pub fn script_next_outcome(&self, outcome: MockOutcome) {
        self.sequence
            .lock()
            .expect("sequence lock")
            .push_back(outcome);
    }

    /// Every request text seen so far (`system\n\nuser`), in arrival order.
    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().expect("requests lock").clone()
    }

    fn next_outcome(&self, haystack: &str) -> (Option<MockOutcome>, Option<Duration>) {
        let mut entries = self.entries.lock().expect("entries lock");
        for entry in entries.iter_mut() {
            if haystack.contains(&entry.substring) {
                let index = entry.cursor.min(entry.outcomes.len() - 1);
                entry.cursor += 1;
                return (Some(entry.outcomes[index].clone()), entry.delay);
            }
        }
        drop(entries);
        (
            self.sequence.lock().expect("sequence lock").pop_front(),
            None,
        )
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let haystack = format!("{}\n\n{}", request.system_prompt, request.user_prompt);
        self.requests
            .lock()
            .expect("requests lock")
            .push(haystack.clone());

        let (outcome, delay) = self.next_outcome(&haystack);
        if let Some(delay) = delay {
            tokio::time::sleep(delay).await;
        }
        match outcome {
            Some(outcome) => outcome.into_result(),
            None => Err(BackendError::MockUnmatched),
        }
    }
}
