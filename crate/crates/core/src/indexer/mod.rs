//! Static indexing: per-document extraction, knowledge-graph assembly,
//! entity/document embeddings and coreference sets.

mod archive;
mod coref;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::corpus::{Corpus, Document, SimpleTokenizer};
use crate::embedding::{Embedder, EmbeddingIndex};
use crate::error::{Error, Result};
use crate::generator::{Extraction, Generator};

pub use archive::{decode_index, encode_index, load_index, save_index, ARCHIVE_VERSION};
pub use coref::{build_coreference, CoreferenceTable};

pub const DEFAULT_COREF_THRESHOLD: f64 = 0.8;
pub const DEFAULT_COREF_K: usize = 5;

/// Canonical entity key: lowercased, whitespace collapsed, and leading or
/// trailing non-alphanumeric characters removed.
pub fn normalize_entity(name: &str) -> Result<String> {
    let lowered = name.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let canonical = collapsed.trim_matches(|c: char| !c.is_alphanumeric());
    if canonical.is_empty() {
        return Err(Error::EmptyEntity(name.to_string()));
    }
    Ok(canonical.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub canonical_name: String,
    pub surface_forms: BTreeSet<String>,
    pub source_doc_ids: BTreeSet<String>,
    pub embedding_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub source_doc_id: String,
}

impl Triple {
    /// The endpoint across the edge from `node`, if `node` is an endpoint.
    pub fn other_end(&self, node: &str) -> Option<&str> {
        if self.head == node {
            Some(&self.tail)
        } else if self.tail == node {
            Some(&self.head)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub entities: BTreeMap<String, Entity>,
    pub triples: Vec<Triple>,
    /// Triple indices incident to each entity, as head or tail, ascending.
    pub adjacency: BTreeMap<String, Vec<usize>>,
}

impl KnowledgeGraph {
    /// Deterministic reduce over per-document extractions, in input order.
    /// Surface forms merge under [`normalize_entity`]; a triple repeated
    /// within one document is stored once; self-loops are dropped.
    pub fn from_extractions<'a>(
        items: impl IntoIterator<Item = (&'a str, &'a Extraction)>,
    ) -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::default();
        let mut seen: HashSet<Triple> = HashSet::new();
        for (doc_id, ex) in items {
            for surface in &ex.entities {
                if let Ok(name) = normalize_entity(surface) {
                    kg.note_entity(&name, surface, doc_id);
                }
            }
            for (h, r, t) in &ex.triples {
                let (Ok(head), Ok(tail)) = (normalize_entity(h), normalize_entity(t)) else {
                    continue;
                };
                let relation = r.split_whitespace().collect::<Vec<_>>().join(" ");
                if relation.is_empty() {
                    continue;
                }
                kg.note_entity(&head, h, doc_id);
                kg.note_entity(&tail, t, doc_id);
                if head == tail {
                    warn!(doc_id, entity = %head, %relation, "dropping self-loop triple");
                    continue;
                }
                let triple = Triple {
                    head,
                    relation,
                    tail,
                    source_doc_id: doc_id.to_string(),
                };
                if seen.insert(triple.clone()) {
                    let idx = kg.triples.len();
                    kg.adjacency.get_mut(&triple.head).expect("noted").push(idx);
                    kg.adjacency.get_mut(&triple.tail).expect("noted").push(idx);
                    kg.triples.push(triple);
                }
            }
        }
        kg
    }

    fn note_entity(&mut self, name: &str, surface: &str, doc_id: &str) {
        let entity = self
            .entities
            .entry(name.to_string())
            .or_insert_with(|| Entity {
                canonical_name: name.to_string(),
                surface_forms: BTreeSet::new(),
                source_doc_ids: BTreeSet::new(),
                embedding_key: name.to_string(),
            });
        entity.surface_forms.insert(surface.trim().to_string());
        entity.source_doc_ids.insert(doc_id.to_string());
        self.adjacency.entry(name.to_string()).or_default();
    }

    pub fn triple_indices_of(&self, entity: &str) -> &[usize] {
        self.adjacency.get(entity).map_or(&[], Vec::as_slice)
    }

    /// Triples with `entity` as head or tail, in index order. Unknown
    /// entities have none.
    pub fn triples_of(&self, entity: &str) -> Vec<&Triple> {
        self.triple_indices_of(entity)
            .iter()
            .map(|&i| &self.triples[i])
            .collect()
    }

    pub fn relation_count(&self) -> usize {
        self.triples
            .iter()
            .map(|t| t.relation.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    /// Entities extracted from `doc_id`.
    pub fn doc_entities(&self, doc_id: &str) -> BTreeSet<&str> {
        self.entities
            .values()
            .filter(|e| e.source_doc_ids.contains(doc_id))
            .map(|e| e.canonical_name.as_str())
            .collect()
    }

    /// Every triple endpoint is an entity and adjacency lists exactly the
    /// incident triples of each entity.
    pub fn check_closure(&self) -> Result<()> {
        let mut expected: BTreeMap<&str, Vec<usize>> = self
            .entities
            .keys()
            .map(|k| (k.as_str(), Vec::new()))
            .collect();
        for (i, t) in self.triples.iter().enumerate() {
            for end in [&t.head, &t.tail] {
                expected
                    .get_mut(end.as_str())
                    .ok_or_else(|| {
                        Error::CorruptArchive(format!(
                            "triple {i} endpoint {end:?} is not an entity"
                        ))
                    })?
                    .push(i);
            }
        }
        let actual: BTreeMap<&str, Vec<usize>> = self
            .adjacency
            .iter()
            .map(|(k, v)| (k.as_str(), v.clone()))
            .collect();
        if expected != actual {
            return Err(Error::CorruptArchive(
                "adjacency does not match triples".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IndexStats {
    pub documents_attempted: usize,
    pub documents_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub coref_threshold: f64,
    pub coref_k: usize,
    /// Documents over this many tokens are chunked before extraction.
    pub max_chunk_tokens: Option<usize>,
    pub concurrency: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            coref_threshold: DEFAULT_COREF_THRESHOLD,
            coref_k: DEFAULT_COREF_K,
            max_chunk_tokens: Some(512),
            concurrency: 4,
        }
    }
}

/// Everything retrieval needs, persisted as one archive.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub documents: Vec<Document>,
    pub kg: KnowledgeGraph,
    pub coref: CoreferenceTable,
    pub entity_vectors: EmbeddingIndex,
    pub doc_vectors: EmbeddingIndex,
    pub embedder_id: String,
    pub stats: IndexStats,
}

impl Index {
    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }
}

pub fn build_index(
    corpus: &Corpus,
    generator: &Generator,
    embedder: &dyn Embedder,
    config: &IndexConfig,
) -> Result<Index> {
    let corpus = match config.max_chunk_tokens {
        Some(max) => corpus.chunked(max, &SimpleTokenizer)?,
        None => corpus.clone(),
    };
    let docs = &corpus.documents;
    if docs.is_empty() {
        return Err(Error::Precondition("cannot index an empty corpus".into()));
    }

    let threads = if generator.order_sensitive() {
        1
    } else {
        config.concurrency.max(1)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<Extraction>> = pool.install(|| {
        docs.par_iter()
            .map(|d| generator.extract_graph(d))
            .collect()
    });

    let mut extracted = Vec::with_capacity(docs.len());
    let mut failed = 0;
    for (doc, result) in docs.iter().zip(results) {
        match result {
            Ok(ex) => extracted.push((doc.doc_id.as_str(), ex)),
            Err(e) => {
                warn!(doc_id = %doc.doc_id, error = %e, "extraction failed, skipping document");
                generator.ledger().record_skipped_document();
                failed += 1;
            }
        }
    }
    if failed * 2 > docs.len() {
        return Err(Error::TooManyFailures {
            failed,
            attempted: docs.len(),
        });
    }

    let kg = KnowledgeGraph::from_extractions(extracted.iter().map(|(id, ex)| (*id, ex)));

    let names: Vec<String> = kg.entities.keys().cloned().collect();
    let entity_vectors = if names.is_empty() {
        EmbeddingIndex::empty(embedder.dim())
    } else {
        EmbeddingIndex::new(names.clone(), embedder.embed(&names)?, true)?
    };
    let doc_texts: Vec<String> = docs.iter().map(Document::embedding_text).collect();
    let doc_vectors = EmbeddingIndex::new(
        docs.iter().map(|d| d.doc_id.clone()).collect(),
        embedder.embed(&doc_texts)?,
        true,
    )?;
    let coref = build_coreference(&entity_vectors, config.coref_threshold, config.coref_k)?;

    info!(
        documents = docs.len(),
        skipped = failed,
        entities = kg.entities.len(),
        triples = kg.triples.len(),
        "index built"
    );
    Ok(Index {
        documents: corpus.documents.clone(),
        kg,
        coref,
        entity_vectors,
        doc_vectors,
        embedder_id: embedder.id(),
        stats: IndexStats {
            documents_attempted: docs.len(),
            documents_skipped: failed,
        },
    })
}
