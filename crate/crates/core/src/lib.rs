//! Multi-hop retrieval over an LLM-extracted knowledge graph.
//!
//! Indexing extracts triples per document and embeds entities; retrieval
//! tracks reasoning paths hop by hop from the question's entities, then
//! completes the ranking with a second embedding search over the question
//! plus the tracked chain.

pub mod completion;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod eval;
pub mod generator;
pub mod indexer;
pub mod tracker;

pub use config::EngineConfig;
pub use engine::{Answered, Engine, Retrieval};
pub use error::{Error, Result};
