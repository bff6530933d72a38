//! The assembled pipeline: track, complete and optionally answer.

use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::completion::{complete, source_ranking, RetrievalResult};
use crate::config::EngineConfig;
use crate::corpus::Document;
use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::indexer::Index;
use crate::tracker::{track, Trace, TrackResult};

#[derive(Debug, Clone)]
pub struct Retrieval {
    pub result: RetrievalResult,
    pub track: TrackResult,
    pub trace: Trace,
}

#[derive(Debug, Clone)]
pub struct Answered {
    pub retrieval: Retrieval,
    pub answer: String,
}

/// Cheap to clone; the index is shared.
#[derive(Debug, Clone)]
pub struct Engine {
    index: Arc<Index>,
    generator: Generator,
    embedder: Arc<dyn Embedder>,
    config: EngineConfig,
    parents: Arc<BTreeMap<String, String>>,
}

/// Short stable id for a question's trace.
pub fn trace_ref(question: &str) -> String {
    let digest = Sha256::digest(question.as_bytes());
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("trace-{hex}")
}

impl Engine {
    /// Fails if the config is invalid or the embedder differs from the one
    /// the index was built with.
    pub fn new(
        index: Arc<Index>,
        generator: Generator,
        embedder: Arc<dyn Embedder>,
        config: EngineConfig,
    ) -> Result<Self> {
        config.validate()?;
        if embedder.id() != index.embedder_id {
            return Err(Error::Config(format!(
                "index was built with embedder {:?} but {:?} is configured",
                index.embedder_id,
                embedder.id()
            )));
        }
        let parents = index
            .documents
            .iter()
            .filter_map(|d| d.parent.as_ref().map(|p| (d.doc_id.clone(), p.clone())))
            .collect();
        Ok(Engine {
            index,
            generator,
            embedder,
            config,
            parents: Arc::new(parents),
        })
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    /// Same engine, different generator (e.g. one with its own ledger).
    pub fn with_generator(&self, generator: Generator) -> Engine {
        Engine {
            generator,
            ..self.clone()
        }
    }

    pub fn with_config(&self, config: EngineConfig) -> Result<Engine> {
        config.validate()?;
        Ok(Engine {
            config,
            ..self.clone()
        })
    }

    pub fn retrieve(&self, question: &str) -> Result<Retrieval> {
        let tracked = track(
            question,
            &self.index,
            &self.generator,
            self.embedder.as_ref(),
            &self.config.track_config(),
        )?;
        let mut result = complete(
            question,
            &tracked.result,
            &self.index.kg,
            &self.index.doc_vectors,
            self.embedder.as_ref(),
            &self.config.completion_config(),
        )?;
        result.trace_ref = Some(trace_ref(question));
        let mut trace = tracked.trace;
        trace.config = self.config.to_json();
        trace.q_prime = Some(result.augmented_query.clone());
        trace.ranked = result.ranked_docs.clone();
        Ok(Retrieval {
            result,
            track: tracked.result,
            trace,
        })
    }

    /// Ranked ids folded back to corpus documents (chunks map to their
    /// source document).
    pub fn source_ranking(&self, result: &RetrievalResult) -> Vec<String> {
        source_ranking(&result.doc_ids(), &self.parents)
    }

    /// The first `qa_top_docs` retrieved documents.
    pub fn contexts(&self, result: &RetrievalResult) -> Vec<Document> {
        result
            .ranked_docs
            .iter()
            .filter_map(|d| self.index.document(&d.doc_id))
            .take(self.config.qa_top_docs)
            .cloned()
            .collect()
    }

    pub fn answer(&self, question: &str) -> Result<Answered> {
        let retrieval = self.retrieve(question)?;
        let contexts = self.contexts(&retrieval.result);
        let answer = self.generator.answer(question, &contexts)?;
        Ok(Answered { retrieval, answer })
    }
}
