//! Chat backends: the trait, a scripted mock and a closure-driven responder.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::ledger::Stage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Openie,
    QueryEntities,
    PathTracking,
    Qa,
}

impl CallKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CallKind::Openie => "openie",
            CallKind::QueryEntities => "query_entities",
            CallKind::PathTracking => "path_tracking",
            CallKind::Qa => "qa",
        }
    }

    pub fn stage(self) -> Stage {
        match self {
            CallKind::Openie => Stage::Indexing,
            CallKind::QueryEntities | CallKind::PathTracking => Stage::Retrieval,
            CallKind::Qa => Stage::Qa,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One chat call. `vars` carries the template variables the prompt was
/// rendered from so test responders can act on structured inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub kind: CallKind,
    pub messages: Vec<ChatMessage>,
    pub vars: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn var(&self, name: &str) -> &str {
        self.vars.get(name).map_or("", String::as_str)
    }

    /// Zero-based retry counter: the number of reformat reminders so far.
    pub fn attempt(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            usage: None,
        }
    }
}

pub trait LlmBackend: Send + Sync + fmt::Debug {
    fn complete(&self, request: &ChatRequest) -> Result<Completion>;

    fn name(&self) -> String;

    /// True when replies depend on call order rather than call content, so
    /// callers must not issue requests concurrently.
    fn order_sensitive(&self) -> bool {
        false
    }
}

/// Mock backend fed from per-call-kind queues of canned responses.
/// An exhausted queue is a non-retryable backend error.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<BTreeMap<CallKind, VecDeque<String>>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        ScriptedBackend::default()
    }

    pub fn push(&self, kind: CallKind, response: impl Into<String>) -> &Self {
        self.queues
            .lock()
            .expect("script lock poisoned")
            .entry(kind)
            .or_default()
            .push_back(response.into());
        self
    }

    pub fn with(self, kind: CallKind, response: impl Into<String>) -> Self {
        self.push(kind, response);
        self
    }

    pub fn remaining(&self, kind: CallKind) -> usize {
        self.queues
            .lock()
            .expect("script lock poisoned")
            .get(&kind)
            .map_or(0, VecDeque::len)
    }

    /// Parses a script such as `{"openie": [..], "qa": ["Answer: x"]}`.
    /// Entries may be strings or JSON values; values are sent re-encoded.
    pub fn from_json(input: &str) -> Result<Self> {
        let raw: BTreeMap<CallKind, Vec<serde_json::Value>> = serde_json::from_str(input)?;
        let backend = ScriptedBackend::new();
        for (kind, entries) in raw {
            for entry in entries {
                match entry {
                    serde_json::Value::String(s) => backend.push(kind, s),
                    other => backend.push(kind, other.to_string()),
                };
            }
        }
        Ok(backend)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let input = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ScriptedBackend::from_json(&input)
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        let mut queues = self.queues.lock().expect("script lock poisoned");
        queues
            .get_mut(&request.kind)
            .and_then(VecDeque::pop_front)
            .map(Completion::text)
            .ok_or_else(|| Error::Backend {
                backend: "scripted".into(),
                message: format!("script exhausted for {}", request.kind.as_str()),
                retryable: false,
            })
    }

    fn name(&self) -> String {
        "scripted".into()
    }

    fn order_sensitive(&self) -> bool {
        true
    }
}

type ResponderFn = dyn Fn(&ChatRequest) -> Result<String> + Send + Sync;

/// Backend whose replies are computed by a closure over the request.
#[derive(Clone)]
pub struct ResponderBackend {
    name: String,
    respond: Arc<ResponderFn>,
}

impl ResponderBackend {
    pub fn new(
        name: impl Into<String>,
        respond: impl Fn(&ChatRequest) -> Result<String> + Send + Sync + 'static,
    ) -> Self {
        ResponderBackend {
            name: name.into(),
            respond: Arc::new(respond),
        }
    }
}

impl fmt::Debug for ResponderBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResponderBackend")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

impl LlmBackend for ResponderBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        (self.respond)(request).map(Completion::text)
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(kind: CallKind) -> ChatRequest {
        ChatRequest {
            kind,
            messages: vec![ChatMessage::user("hi")],
            vars: BTreeMap::new(),
        }
    }

    #[test]
    fn scripted_queues_are_per_kind() {
        let b = ScriptedBackend::new()
            .with(CallKind::Qa, "one")
            .with(CallKind::Qa, "two")
            .with(CallKind::Openie, "{}");
        assert_eq!(b.complete(&req(CallKind::Qa)).unwrap().text, "one");
        assert_eq!(b.complete(&req(CallKind::Openie)).unwrap().text, "{}");
        assert_eq!(b.complete(&req(CallKind::Qa)).unwrap().text, "two");
        let err = b.complete(&req(CallKind::Qa)).unwrap_err();
        assert!(!err.is_retryable());
        assert!(err.to_string().contains("exhausted for qa"));
    }

    #[test]
    fn script_from_json() {
        let b = ScriptedBackend::from_json(
            r#"{"query_entities": [{"entities": ["X"]}], "qa": ["Answer: X"]}"#,
        )
        .unwrap();
        assert_eq!(b.remaining(CallKind::QueryEntities), 1);
        assert_eq!(
            b.complete(&req(CallKind::QueryEntities)).unwrap().text,
            r#"{"entities":["X"]}"#
        );
        assert!(ScriptedBackend::from_json(r#"{"bogus": []}"#).is_err());
    }
}
