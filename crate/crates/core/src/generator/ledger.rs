use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Indexing,
    Retrieval,
    Qa,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
}

impl StageUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add(&mut self, other: &StageUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.calls += other.calls;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
    pub indexing: StageUsage,
    pub retrieval: StageUsage,
    pub qa: StageUsage,
    /// Documents dropped from the index because extraction failed.
    pub skipped_documents: u64,
    /// Calls answered by a fallback instead of a parsed response.
    pub degraded_calls: u64,
}

impl LedgerSnapshot {
    pub fn stage(&self, stage: Stage) -> &StageUsage {
        match stage {
            Stage::Indexing => &self.indexing,
            Stage::Retrieval => &self.retrieval,
            Stage::Qa => &self.qa,
        }
    }

    pub fn merge(&mut self, other: &LedgerSnapshot) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.calls += other.calls;
        self.indexing.add(&other.indexing);
        self.retrieval.add(&other.retrieval);
        self.qa.add(&other.qa);
        self.skipped_documents += other.skipped_documents;
        self.degraded_calls += other.degraded_calls;
    }
}

/// Token and call counters per pipeline stage. Shared between threads;
/// every update is applied under one lock so snapshots never tear.
#[derive(Debug, Default)]
pub struct TokenLedger {
    inner: Mutex<LedgerSnapshot>,
}

impl TokenLedger {
    pub fn new() -> Self {
        TokenLedger::default()
    }

    pub fn record(&self, stage: Stage, prompt_tokens: u64, completion_tokens: u64) {
        let mut s = self.inner.lock().expect("ledger lock poisoned");
        s.prompt_tokens += prompt_tokens;
        s.completion_tokens += completion_tokens;
        s.calls += 1;
        let usage = match stage {
            Stage::Indexing => &mut s.indexing,
            Stage::Retrieval => &mut s.retrieval,
            Stage::Qa => &mut s.qa,
        };
        usage.prompt_tokens += prompt_tokens;
        usage.completion_tokens += completion_tokens;
        usage.calls += 1;
    }

    pub fn record_skipped_document(&self) {
        self.inner
            .lock()
            .expect("ledger lock poisoned")
            .skipped_documents += 1;
    }

    pub fn record_degraded(&self) {
        self.inner
            .lock()
            .expect("ledger lock poisoned")
            .degraded_calls += 1;
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        self.inner.lock().expect("ledger lock poisoned").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_per_stage() {
        let l = TokenLedger::new();
        l.record(Stage::Indexing, 10, 5);
        l.record(Stage::Qa, 3, 1);
        l.record(Stage::Qa, 3, 1);
        let s = l.snapshot();
        assert_eq!((s.prompt_tokens, s.completion_tokens, s.calls), (16, 7, 3));
        assert_eq!(
            s.qa,
            StageUsage {
                prompt_tokens: 6,
                completion_tokens: 2,
                calls: 2
            }
        );
        assert_eq!(s.retrieval, StageUsage::default());
    }

    #[test]
    fn concurrent_updates_are_not_lost() {
        let l = TokenLedger::new();
        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| {
                    for _ in 0..1000 {
                        l.record(Stage::Retrieval, 2, 1);
                    }
                });
            }
        });
        let s = l.snapshot();
        assert_eq!(s.calls, 8000);
        assert_eq!(s.retrieval.total(), 24000);
    }
}
