//! Corpus ingestion: documents, QA records, token counting and chunking.
//!
//! Corpora are JSON-lines files. A line carrying a `question` field is a QA
//! record (`{id, question, answer?, supporting_ids}`); every other line is a
//! document (`{id, title, text}`).

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest chunk budget accepted by [`chunk_document`].
pub const MIN_CHUNK_TOKENS: usize = 32;

/// Counts tokens in a text. Implementations must be deterministic and
/// monotone under concatenation.
pub trait Tokenizer: Send + Sync + fmt::Debug {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace/punctuation tokenizer: every maximal alphanumeric run is one
/// token and every other non-whitespace character is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleTokenizer;

impl Tokenizer for SimpleTokenizer {
    fn count(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() {
                if !in_word {
                    count += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Token count under the built-in [`SimpleTokenizer`].
pub fn count_tokens(text: &str) -> usize {
    SimpleTokenizer.count(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
    #[serde(skip)]
    pub token_count: usize,
    /// Id of the document this chunk was cut from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        text: impl Into<String>,
        tokenizer: &dyn Tokenizer,
    ) -> Result<Self> {
        let doc = Document {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
            token_count: 0,
            parent: None,
        };
        doc.validated(tokenizer)
    }

    fn validated(mut self, tokenizer: &dyn Tokenizer) -> Result<Self> {
        if self.doc_id.trim().is_empty() {
            return Err(Error::Precondition("document id is empty".into()));
        }
        if self.text.trim().is_empty() {
            return Err(Error::Precondition(format!(
                "document {:?} has empty text",
                self.doc_id
            )));
        }
        self.token_count = tokenizer.count(&self.text);
        Ok(self)
    }

    /// The corpus-level id this document answers for in evaluation.
    pub fn source_id(&self) -> &str {
        self.parent.as_deref().unwrap_or(&self.doc_id)
    }

    /// The string embedded for second-stage retrieval.
    pub fn embedding_text(&self) -> String {
        if self.title.is_empty() {
            self.text.clone()
        } else {
            format!("{}\n{}", self.title, self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    #[serde(rename = "id")]
    pub query_id: String,
    pub question: String,
    #[serde(rename = "answer", default)]
    pub gold_answer: String,
    #[serde(rename = "supporting_ids", default)]
    pub gold_doc_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub records: Vec<QaRecord>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, records: Vec<QaRecord>) -> Result<Self> {
        let corpus = Corpus { documents, records };
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for doc in &self.documents {
            if !ids.insert(doc.doc_id.as_str()) {
                return Err(Error::DuplicateId(doc.doc_id.clone()));
            }
        }
        let sources: HashSet<&str> = self.documents.iter().map(|d| d.source_id()).collect();
        let mut query_ids = HashSet::new();
        for rec in &self.records {
            if !query_ids.insert(rec.query_id.as_str()) {
                return Err(Error::DuplicateId(rec.query_id.clone()));
            }
            if rec.question.trim().is_empty() {
                return Err(Error::Precondition(format!(
                    "record {:?} has an empty question",
                    rec.query_id
                )));
            }
            if let Some(missing) = rec
                .gold_doc_ids
                .iter()
                .find(|id| !sources.contains(id.as_str()) && !ids.contains(id.as_str()))
            {
                return Err(Error::UnknownDocument(missing.clone()));
            }
        }
        Ok(())
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// Splits every document longer than `max_tokens` into chunks.
    pub fn chunked(&self, max_tokens: usize, tokenizer: &dyn Tokenizer) -> Result<Corpus> {
        let mut documents = Vec::with_capacity(self.documents.len());
        for doc in &self.documents {
            documents.extend(chunk_document(doc, max_tokens, tokenizer)?);
        }
        Corpus::new(documents, self.records.clone())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(input: &str, tokenizer: &dyn Tokenizer) -> Result<Corpus> {
        let mut documents = Vec::new();
        let mut records = Vec::new();
        let mut seen_docs = HashSet::new();
        for (i, line) in input.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| Error::MalformedLine {
                line: line_no,
                message,
            };
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            if !value.is_object() {
                return Err(malformed("expected a JSON object".into()));
            }
            if value.get("question").is_some() {
                let rec: QaRecord =
                    serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
                records.push(rec);
            } else {
                let doc: Document =
                    serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
                if !seen_docs.insert(doc.doc_id.clone()) {
                    return Err(Error::DuplicateId(doc.doc_id));
                }
                let doc = doc
                    .validated(tokenizer)
                    .map_err(|e| malformed(e.to_string()))?;
                documents.push(doc);
            }
        }
        Corpus::new(documents, records)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let input = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Jsonl => Corpus::parse_jsonl(&input, &SimpleTokenizer),
    }
}

/// Splits a document into chunks of at most `max_tokens` tokens.
///
/// Boundaries prefer sentence ends; a single sentence over budget is cut at
/// the longest prefix that still fits. A document within budget is returned
/// unchanged. Chunk ids are `<doc_id>#<k>`.
pub fn chunk_document(
    doc: &Document,
    max_tokens: usize,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Document>> {
    if max_tokens < MIN_CHUNK_TOKENS {
        return Err(Error::Precondition(format!(
            "max_tokens must be at least {MIN_CHUNK_TOKENS}, got {max_tokens}"
        )));
    }
    if doc.text.trim().is_empty() {
        return Err(Error::Precondition(format!(
            "document {:?} has empty text",
            doc.doc_id
        )));
    }
    let text = doc.text.as_str();
    if tokenizer.count(text) <= max_tokens {
        let mut whole = doc.clone();
        whole.token_count = tokenizer.count(text);
        return Ok(vec![whole]);
    }

    let mut units = Vec::new();
    for (start, end) in sentence_spans(text) {
        if tokenizer.count(text[start..end].trim()) <= max_tokens {
            units.push((start, end));
        } else {
            hard_split(text, start, end, max_tokens, tokenizer, &mut units);
        }
    }

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (start, end) in units {
        current = match current {
            None => Some((start, end)),
            Some((cs, ce)) => {
                if tokenizer.count(text[cs..end].trim()) <= max_tokens {
                    Some((cs, end))
                } else {
                    spans.push((cs, ce));
                    Some((start, end))
                }
            }
        };
    }
    spans.extend(current);

    let parent = doc.parent.clone().unwrap_or_else(|| doc.doc_id.clone());
    let chunks = spans
        .into_iter()
        .map(|(s, e)| text[s..e].trim())
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(k, chunk)| Document {
            doc_id: format!("{}#{}", doc.doc_id, k),
            title: doc.title.clone(),
            text: chunk.to_string(),
            token_count: tokenizer.count(chunk),
            parent: Some(parent.clone()),
        })
        .collect();
    Ok(chunks)
}

/// Byte spans of sentences; each span runs through the whitespace that
/// follows its terminator so the spans tile the text.
fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let next_is_space = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
        let terminal = c == '\n' || (matches!(c, '.' | '!' | '?') && next_is_space);
        if !terminal {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, n)) = chars.peek() {
            if !n.is_whitespace() {
                break;
            }
            end = j + n.len_utf8();
            chars.next();
        }
        spans.push((start, end));
        start = end;
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }
    spans
}

fn hard_split(
    text: &str,
    mut start: usize,
    end: usize,
    max_tokens: usize,
    tokenizer: &dyn Tokenizer,
    out: &mut Vec<(usize, usize)>,
) {
    while start < end {
        if tokenizer.count(text[start..end].trim()) <= max_tokens {
            out.push((start, end));
            return;
        }
        let bounds: Vec<usize> = text[start..end]
            .char_indices()
            .map(|(i, _)| start + i)
            .skip(1)
            .collect();
        // Largest cut whose prefix still fits; prefix counts are monotone.
        let fits =
            bounds.partition_point(|&cut| tokenizer.count(text[start..cut].trim()) <= max_tokens);
        let cut = if fits == 0 {
            bounds[0]
        } else {
            bounds[fits - 1]
        };
        out.push((start, cut));
        start = cut;
    }
}
