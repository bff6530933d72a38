//! Post-retrieval completion: documents along the tracked paths, plus a
//! second embedding search with the question widened by the final chain
//! and requirement.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_sim, embed_one, Embedder, EmbeddingIndex};
use crate::error::{Error, Result};
use crate::indexer::KnowledgeGraph;
use crate::tracker::{Path, TrackResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Path,
    SecondStage,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Path => "path",
            Provenance::SecondStage => "second_stage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub provenance: Provenance,
    /// Similarity to the augmented query.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub question: String,
    #[serde(rename = "q_prime")]
    pub augmented_query: String,
    #[serde(rename = "ranked")]
    pub ranked_docs: Vec<RankedDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
}

impl RetrievalResult {
    pub fn doc_ids(&self) -> Vec<&str> {
        self.ranked_docs.iter().map(|d| d.doc_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeOrder {
    /// Path documents in path order, then new second-stage documents.
    #[default]
    PathFirst,
    /// The union sorted by similarity to the augmented query.
    ScoreInterleave,
}

impl FromStr for MergeOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('_', "-").as_str() {
            "path-first" => Ok(MergeOrder::PathFirst),
            "score-interleave" => Ok(MergeOrder::ScoreInterleave),
            other => Err(Error::Config(format!(
                "merge order must be path-first or score-interleave, got {other:?}"
            ))),
        }
    }
}

/// Source documents of every segment on `paths`, most-used first; ties keep
/// the order in which documents first appear along the paths.
pub fn collect_path_docs(paths: &[Path], kg: &KnowledgeGraph) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for doc in paths.iter().flat_map(|p| p.source_docs(kg)) {
        let c = counts.entry(doc).or_insert(0);
        if *c == 0 {
            order.push(doc);
        }
        *c += 1;
    }
    // Stable sort keeps first-appearance order among equal counts.
    order.sort_by_key(|d| std::cmp::Reverse(counts[d]));
    order.into_iter().map(str::to_string).collect()
}

/// `question`, chain and goal on separate lines, skipping empty parts.
pub fn build_second_query(question: &str, last_chain: &str, last_goal: &str) -> String {
    [question, last_chain, last_goal]
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn second_stage_retrieve(
    q_prime: &str,
    doc_index: &EmbeddingIndex,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let v = embed_one(embedder, q_prime)?;
    doc_index.top_k(&v, k)
}

/// Unions path and second-stage documents without duplicates, cut to
/// `limit`. A document found both ways keeps path provenance.
pub fn merge(
    path_docs: &[(String, f64)],
    second_docs: &[(String, f64)],
    limit: usize,
    order: MergeOrder,
) -> Vec<RankedDoc> {
    let mut seen = HashSet::new();
    let mut out: Vec<RankedDoc> = Vec::new();
    let tagged = path_docs
        .iter()
        .map(|d| (d, Provenance::Path))
        .chain(second_docs.iter().map(|d| (d, Provenance::SecondStage)));
    for ((doc_id, score), provenance) in tagged {
        if seen.insert(doc_id.as_str()) {
            out.push(RankedDoc {
                doc_id: doc_id.clone(),
                provenance,
                score: *score,
            });
        }
    }
    if order == MergeOrder::ScoreInterleave {
        out.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
    }
    out.truncate(limit);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionConfig {
    /// Second-stage top-k.
    pub second_stage_k: usize,
    /// Length of the merged ranking.
    pub limit: usize,
    pub merge_order: MergeOrder,
    /// When false only path documents are returned.
    pub enabled: bool,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig {
            second_stage_k: 10,
            limit: 10,
            merge_order: MergeOrder::PathFirst,
            enabled: true,
        }
    }
}

/// Final ranking for a tracked question.
pub fn complete(
    question: &str,
    tracked: &TrackResult,
    kg: &KnowledgeGraph,
    doc_index: &EmbeddingIndex,
    embedder: &dyn Embedder,
    config: &CompletionConfig,
) -> Result<RetrievalResult> {
    if question.trim().is_empty() {
        return Err(Error::Precondition("question is empty".into()));
    }
    if config.limit == 0 || config.second_stage_k == 0 {
        return Err(Error::Config(
            "retrieval limit and second-stage k must be positive".into(),
        ));
    }
    let q_prime = build_second_query(question, &tracked.last_chain, &tracked.last_goal);
    let qv = embed_one(embedder, &q_prime)?;
    let path_docs = collect_path_docs(&tracked.final_valid_paths, kg)
        .into_iter()
        .map(|id| {
            let score = match doc_index.get(&id) {
                Some(v) => cosine_sim(&qv, v)?,
                None => 0.0,
            };
            Ok((id, score))
        })
        .collect::<Result<Vec<_>>>()?;
    let second = if config.enabled {
        doc_index.top_k(&qv, config.second_stage_k)?
    } else {
        Vec::new()
    };
    Ok(RetrievalResult {
        question: question.to_string(),
        augmented_query: q_prime,
        ranked_docs: merge(&path_docs, &second, config.limit, config.merge_order),
        trace_ref: None,
    })
}

/// Maps ranked chunk ids to the corpus ids they were cut from, keeping the
/// first occurrence of each.
pub fn source_ranking(ranked: &[&str], parents: &BTreeMap<String, String>) -> Vec<String> {
    let mut seen = HashSet::new();
    ranked
        .iter()
        .map(|id| parents.get(*id).cloned().unwrap_or_else(|| id.to_string()))
        .filter(|id| seen.insert(id.clone()))
        .collect()
}
