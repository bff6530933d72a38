//! Every model call the engine makes: graph extraction, query entity
//! extraction, path tracking and answering.
//!
//! Each call renders a template, sends it through an [`LlmBackend`], parses
//! the reply and records token usage in a shared [`TokenLedger`]. A reply
//! that fails to parse is re-requested up to `retries` times with a
//! reformat reminder appended to the conversation.

mod backend;
mod ledger;
mod openai;
pub mod parse;
mod prompt;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::{Document, SimpleTokenizer, Tokenizer};
use crate::error::{Error, Result};

pub use backend::{
    CallKind, ChatMessage, ChatRequest, Completion, LlmBackend, ResponderBackend, Role,
    ScriptedBackend, Usage,
};
pub use ledger::{LedgerSnapshot, Stage, StageUsage, TokenLedger};
pub use openai::{OpenAiBackend, DEFAULT_BASE_URL, DEFAULT_MODEL, LLM_KEY_ENV};
pub use prompt::{PromptMode, PromptTemplate, Templates};

pub const DEFAULT_RETRIES: usize = 2;

/// Entities and triples extracted from one document, trimmed and non-empty.
/// Every triple endpoint also appears in `entities`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub entities: Vec<String>,
    pub triples: Vec<(String, String, String)>,
}

/// Parsed path-tracking decision. Path references are zero-based positions
/// in the candidate list that was presented.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerOutput {
    pub chain: String,
    pub valid: Vec<usize>,
    pub expand: Vec<usize>,
    pub requirement: String,
    pub continue_flag: bool,
    /// Set when the reply never parsed and the fallback was used.
    pub degraded: bool,
}

#[derive(Clone)]
pub struct Generator {
    backend: Arc<dyn LlmBackend>,
    templates: Arc<Templates>,
    ledger: Arc<TokenLedger>,
    tokenizer: Arc<dyn Tokenizer>,
    retries: usize,
    mode: PromptMode,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("backend", &self.backend.name())
            .field("retries", &self.retries)
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

impl Generator {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Generator {
            backend,
            templates: Arc::new(Templates::builtin()),
            ledger: Arc::new(TokenLedger::new()),
            tokenizer: Arc::new(SimpleTokenizer),
            retries: DEFAULT_RETRIES,
            mode: PromptMode::ZeroShot,
        }
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_mode(mut self, mode: PromptMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    /// Same backend and templates, counting into `ledger`.
    pub fn with_ledger(&self, ledger: Arc<TokenLedger>) -> Self {
        Generator {
            ledger,
            ..self.clone()
        }
    }

    pub fn ledger(&self) -> &Arc<TokenLedger> {
        &self.ledger
    }

    pub fn backend_name(&self) -> String {
        self.backend.name()
    }

    pub fn order_sensitive(&self) -> bool {
        self.backend.order_sensitive()
    }

    fn call<T>(
        &self,
        kind: CallKind,
        vars: &[(&str, &str)],
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T> {
        let template = self.templates.for_call(kind, self.mode);
        let prompt = template.render(vars)?;
        let request_vars: BTreeMap<String, String> = vars
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut messages = vec![ChatMessage::user(prompt)];
        let attempts = self.retries + 1;
        let mut last_error = None;

        for attempt in 0..attempts {
            let request = ChatRequest {
                kind,
                messages: messages.clone(),
                vars: request_vars.clone(),
            };
            let completion = match self.backend.complete(&request) {
                Ok(c) => c,
                Err(e) if e.is_retryable() => {
                    warn!(kind = kind.as_str(), attempt, error = %e, "backend call failed, retrying");
                    last_error = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            self.record_usage(kind, &messages, &completion);
            match parse(&completion.text) {
                Ok(value) => return Ok(value),
                Err(reason) => {
                    warn!(kind = kind.as_str(), attempt, %reason, "unparseable reply");
                    messages.push(ChatMessage::assistant(completion.text));
                    messages.push(ChatMessage::user(reformat_reminder(kind, &reason)));
                    last_error = Some(Error::Parse {
                        kind: kind.as_str(),
                        attempts: attempt + 1,
                        message: reason,
                    });
                }
            }
        }
        Err(last_error.expect("at least one attempt is made"))
    }

    fn record_usage(&self, kind: CallKind, messages: &[ChatMessage], completion: &Completion) {
        let (prompt, output) = match completion.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (
                messages
                    .iter()
                    .map(|m| self.tokenizer.count(&m.content) as u64)
                    .sum(),
                self.tokenizer.count(&completion.text) as u64,
            ),
        };
        self.ledger.record(kind.stage(), prompt, output);
    }

    /// Extracts entities and relation triples from one document in a single call.
    pub fn extract_graph(&self, doc: &Document) -> Result<Extraction> {
        if doc.text.trim().is_empty() {
            return Err(Error::Precondition(format!(
                "document {:?} has empty text",
                doc.doc_id
            )));
        }
        let raw = self.call(
            CallKind::Openie,
            &[("title", &doc.title), ("text", &doc.text)],
            parse::parse_openie,
        )?;

        let mut entities: Vec<String> = Vec::new();
        let mut seen = HashSet::new();
        let mut add = |name: &str, entities: &mut Vec<String>| {
            if !name.is_empty() && seen.insert(name.to_string()) {
                entities.push(name.to_string());
            }
        };
        for e in &raw.entities {
            add(e.trim(), &mut entities);
        }
        let mut triples = Vec::new();
        for (h, r, t) in raw.triples {
            let (h, r, t) = (h.trim(), r.trim(), t.trim());
            if h.is_empty() || r.is_empty() || t.is_empty() {
                continue;
            }
            add(h, &mut entities);
            add(t, &mut entities);
            triples.push((h.to_string(), r.to_string(), t.to_string()));
        }
        Ok(Extraction { entities, triples })
    }

    /// Key entities of a question, deduplicated case-insensitively in reply
    /// order. Falls back to the whole question when nothing usable comes back.
    pub fn extract_query_entities(&self, question: &str) -> Result<Vec<String>> {
        let question = question.trim();
        if question.is_empty() {
            return Err(Error::Precondition("question is empty".into()));
        }
        let raw = match self.call(
            CallKind::QueryEntities,
            &[("question", question)],
            parse::parse_entity_list,
        ) {
            Ok(list) => list,
            Err(Error::Parse { message, .. }) => {
                warn!(%message, "query entity extraction unparseable, using the question");
                self.ledger.record_degraded();
                Vec::new()
            }
            Err(e) => return Err(e),
        };
        let mut seen = HashSet::new();
        let entities: Vec<String> = raw
            .into_iter()
            .map(|e| e.trim().to_string())
            .filter(|e| !e.is_empty() && seen.insert(e.to_lowercase()))
            .collect();
        if entities.is_empty() {
            warn!(question, "no query entities extracted, using the question");
            return Ok(vec![question.to_string()]);
        }
        Ok(entities)
    }

    /// Asks the model which of the numbered candidate paths are valid, which
    /// to expand, and whether to continue.
    ///
    /// References outside the presented range are dropped. A reply that
    /// never parses yields the conservative fallback: every candidate valid
    /// and expanded, continue set, requirement equal to the question.
    pub fn track_paths(
        &self,
        question: &str,
        candidates: &[String],
        history_chain: &str,
    ) -> Result<TrackerOutput> {
        if candidates.is_empty() {
            return Err(Error::Precondition("no candidate paths to track".into()));
        }
        let listing = number_candidates(candidates);
        let history = if history_chain.trim().is_empty() {
            "(none yet)"
        } else {
            history_chain
        };
        let raw = match self.call(
            CallKind::PathTracking,
            &[
                ("question", question),
                ("history_chain", history),
                ("candidates", &listing),
            ],
            parse::parse_tracker,
        ) {
            Ok(raw) => raw,
            Err(Error::Parse {
                message, attempts, ..
            }) => {
                warn!(%message, attempts, "path tracking output unparseable, degrading");
                self.ledger.record_degraded();
                let all: Vec<usize> = (0..candidates.len()).collect();
                return Ok(TrackerOutput {
                    chain: history_chain.to_string(),
                    valid: all.clone(),
                    expand: all,
                    requirement: question.to_string(),
                    continue_flag: true,
                    degraded: true,
                });
            }
            Err(e) => return Err(e),
        };

        let n = candidates.len();
        let positions = |ids: &[i64], field: &str| -> Vec<usize> {
            let mut seen = HashSet::new();
            ids.iter()
                .filter_map(|&id| {
                    if id < 1 || id as usize > n {
                        warn!(
                            id,
                            n, field, "tracker cited a path outside the candidate list"
                        );
                        None
                    } else {
                        Some(id as usize - 1)
                    }
                })
                .filter(|p| seen.insert(*p))
                .collect()
        };
        let requirement = if raw.requirement.trim().is_empty() {
            question.to_string()
        } else {
            raw.requirement.trim().to_string()
        };
        Ok(TrackerOutput {
            chain: raw.chain,
            valid: positions(&raw.valid, "valid"),
            expand: positions(&raw.expand, "expand"),
            requirement,
            continue_flag: raw.continue_flag,
            degraded: false,
        })
    }

    /// Short answer to `question` grounded in `contexts`.
    pub fn answer(&self, question: &str, contexts: &[Document]) -> Result<String> {
        if contexts.is_empty() {
            return Err(Error::Precondition(
                "answering needs at least one context".into(),
            ));
        }
        let rendered = contexts
            .iter()
            .enumerate()
            .map(|(i, d)| format!("[{}] {}\n{}", i + 1, d.title, d.text))
            .collect::<Vec<_>>()
            .join("\n\n");
        self.call(
            CallKind::Qa,
            &[("question", question), ("contexts", &rendered)],
            parse::parse_answer,
        )
    }
}

/// `[1] first\n[2] second…`, the listing shown to the tracker.
pub fn number_candidates(candidates: &[String]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| format!("[{}] {}", i + 1, c))
        .collect::<Vec<_>>()
        .join("\n")
}

fn reformat_reminder(kind: CallKind, reason: &str) -> String {
    match kind {
        CallKind::Qa => format!(
            "Your reply could not be used ({reason}). Reply again with only \"Answer: <short answer>\"."
        ),
        _ => format!(
            "Your reply could not be parsed ({reason}). Reply again with only the JSON object in the requested format."
        ),
    }
}
