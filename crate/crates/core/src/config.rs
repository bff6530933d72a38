//! Engine configuration: typed fields, string-keyed layering and backend
//! construction.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::completion::{CompletionConfig, MergeOrder};
use crate::embedding::{Embedder, HashEmbedder, HttpEmbedder};
use crate::error::{Error, Result};
use crate::generator::{
    Generator, LlmBackend, OpenAiBackend, PromptMode, ScriptedBackend, Templates, DEFAULT_BASE_URL,
    DEFAULT_MODEL, DEFAULT_RETRIES,
};
use crate::indexer::{IndexConfig, DEFAULT_COREF_K, DEFAULT_COREF_THRESHOLD};
use crate::tracker::{TrackConfig, DEFAULT_MAX_HOPS, DEFAULT_PRUNE_K, MAX_HOPS_LIMIT};

/// Prefix of environment variables that map onto config keys, e.g.
/// `PATHTRACK_MAX_HOPS` sets `max_hops`.
pub const ENV_PREFIX: &str = "PATHTRACK_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackendKind {
    #[default]
    OpenAi,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub llm_backend: LlmBackendKind,
    pub llm_base_url: String,
    pub llm_model: String,
    /// Script file for the scripted backend.
    pub llm_script: Option<PathBuf>,
    /// Directory of `<name>.txt` prompt overrides.
    pub templates_dir: Option<PathBuf>,
    pub embedder: EmbedderKind,
    pub embed_dim: usize,
    /// Endpoint for the HTTP embedder; falls back to `PATHTRACK_EMBED_URL`.
    pub embed_url: Option<String>,
    pub coref_threshold: f64,
    pub coref_k: usize,
    /// `None` disables pruning.
    pub prune_k: Option<usize>,
    pub max_hops: usize,
    pub prompt_mode: PromptMode,
    pub merge_order: MergeOrder,
    pub retrieval_limit: usize,
    pub second_stage_k: usize,
    pub qa_top_docs: usize,
    pub concurrency: usize,
    /// `None` disables chunking.
    pub max_chunk_tokens: Option<usize>,
    pub retries: usize,
    pub post_completion: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            llm_backend: LlmBackendKind::OpenAi,
            llm_base_url: DEFAULT_BASE_URL.to_string(),
            llm_model: DEFAULT_MODEL.to_string(),
            llm_script: None,
            templates_dir: None,
            embedder: EmbedderKind::Hash,
            embed_dim: crate::embedding::DEFAULT_HASH_DIM,
            embed_url: None,
            coref_threshold: DEFAULT_COREF_THRESHOLD,
            coref_k: DEFAULT_COREF_K,
            prune_k: Some(DEFAULT_PRUNE_K),
            max_hops: DEFAULT_MAX_HOPS,
            prompt_mode: PromptMode::ZeroShot,
            merge_order: MergeOrder::PathFirst,
            retrieval_limit: 10,
            second_stage_k: 10,
            qa_top_docs: 5,
            concurrency: 4,
            max_chunk_tokens: Some(512),
            retries: DEFAULT_RETRIES,
            post_completion: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>> {
    match value.trim().to_ascii_lowercase().as_str() {
        "none" | "off" | "" => Ok(None),
        _ => parse(key, value).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key} = {value:?}: expected a boolean"
        ))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl EngineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "llm_backend",
        "llm_base_url",
        "llm_model",
        "llm_script",
        "templates_dir",
        "embedder",
        "embed_dim",
        "embed_url",
        "coref_threshold",
        "coref_k",
        "prune_k",
        "max_hops",
        "prompt_mode",
        "merge_order",
        "retrieval_limit",
        "second_stage_k",
        "qa_top_docs",
        "concurrency",
        "max_chunk_tokens",
        "retries",
        "post_completion",
    ];

    /// Sets one field from its textual form. Unknown keys are an error.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "llm_backend" => {
                self.llm_backend = match value.trim().to_ascii_lowercase().as_str() {
                    "openai" => LlmBackendKind::OpenAi,
                    "scripted" | "mock" => LlmBackendKind::Scripted,
                    other => {
                        return Err(Error::Config(format!(
                            "llm_backend must be openai or scripted, got {other:?}"
                        )))
                    }
                }
            }
            "llm_base_url" => self.llm_base_url = value.trim().to_string(),
            "llm_model" => self.llm_model = value.trim().to_string(),
            "llm_script" => self.llm_script = optional_path(value),
            "templates_dir" => self.templates_dir = optional_path(value),
            "embedder" => {
                self.embedder = match value.trim().to_ascii_lowercase().as_str() {
                    "hash" => EmbedderKind::Hash,
                    "http" => EmbedderKind::Http,
                    other => {
                        return Err(Error::Config(format!(
                            "embedder must be hash or http, got {other:?}"
                        )))
                    }
                }
            }
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "embed_url" => {
                let v = value.trim();
                self.embed_url = (!v.is_empty()).then(|| v.to_string());
            }
            "coref_threshold" => self.coref_threshold = parse(key, value)?,
            "coref_k" => self.coref_k = parse(key, value)?,
            "prune_k" => self.prune_k = parse_optional(key, value)?,
            "max_hops" => self.max_hops = parse(key, value)?,
            "prompt_mode" => self.prompt_mode = value.parse()?,
            "merge_order" => self.merge_order = value.parse()?,
            "retrieval_limit" => self.retrieval_limit = parse(key, value)?,
            "second_stage_k" => self.second_stage_k = parse(key, value)?,
            "qa_top_docs" => self.qa_top_docs = parse(key, value)?,
            "concurrency" => self.concurrency = parse(key, value)?,
            "max_chunk_tokens" => self.max_chunk_tokens = parse_optional(key, value)?,
            "retries" => self.retries = parse(key, value)?,
            "post_completion" => self.post_completion = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `PATHTRACK_<KEY>` variables for known keys; other variables,
    /// including API keys, are ignored.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(name, value)| {
                let key = name.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
                Self::KEYS.contains(&key.as_str()).then_some((key, value))
            })
            .collect();
        found.sort();
        for (key, value) in found {
            self.apply(&key, &value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("coref_k", self.coref_k),
            ("retrieval_limit", self.retrieval_limit),
            ("second_stage_k", self.second_stage_k),
            ("qa_top_docs", self.qa_top_docs),
            ("concurrency", self.concurrency),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.coref_threshold > 0.0 && self.coref_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "coref_threshold must be in (0, 1], got {}",
                self.coref_threshold
            )));
        }
        if !(1..=MAX_HOPS_LIMIT).contains(&self.max_hops) {
            return Err(Error::Config(format!(
                "max_hops must be between 1 and {MAX_HOPS_LIMIT}, got {}",
                self.max_hops
            )));
        }
        if self.prune_k == Some(0) {
            return Err(Error::Config(
                "prune_k must be positive (use \"none\" to disable)".into(),
            ));
        }
        if let Some(max) = self.max_chunk_tokens {
            if max < crate::corpus::MIN_CHUNK_TOKENS {
                return Err(Error::Config(format!(
                    "max_chunk_tokens must be at least {}, got {max}",
                    crate::corpus::MIN_CHUNK_TOKENS
                )));
            }
        }
        if self.llm_backend == LlmBackendKind::Scripted && self.llm_script.is_none() {
            return Err(Error::Config(
                "the scripted backend needs llm_script".into(),
            ));
        }
        Ok(())
    }

    pub fn track_config(&self) -> TrackConfig {
        TrackConfig {
            max_hops: self.max_hops,
            prune_k: self.prune_k,
        }
    }

    pub fn completion_config(&self) -> CompletionConfig {
        CompletionConfig {
            second_stage_k: self.second_stage_k,
            limit: self.retrieval_limit,
            merge_order: self.merge_order,
            enabled: self.post_completion,
        }
    }

    pub fn index_config(&self) -> IndexConfig {
        IndexConfig {
            coref_threshold: self.coref_threshold,
            coref_k: self.coref_k,
            max_chunk_tokens: self.max_chunk_tokens,
            concurrency: self.concurrency,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn build_backend(&self) -> Result<Arc<dyn LlmBackend>> {
        Ok(match self.llm_backend {
            LlmBackendKind::OpenAi => Arc::new(OpenAiBackend::from_env(
                &self.llm_base_url,
                &self.llm_model,
            )?),
            LlmBackendKind::Scripted => {
                let path = self
                    .llm_script
                    .as_ref()
                    .ok_or_else(|| Error::Config("the scripted backend needs llm_script".into()))?;
                Arc::new(ScriptedBackend::from_file(path)?)
            }
        })
    }

    pub fn build_generator(&self) -> Result<Generator> {
        self.generator_with(self.build_backend()?)
    }

    /// A generator over `backend` with this config's prompts and retries.
    pub fn generator_with(&self, backend: Arc<dyn LlmBackend>) -> Result<Generator> {
        let templates = match &self.templates_dir {
            Some(dir) => Templates::load_dir(dir)?,
            None => Templates::builtin(),
        };
        Ok(Generator::new(backend)
            .with_templates(templates)
            .with_retries(self.retries)
            .with_mode(self.prompt_mode))
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn Embedder>> {
        Ok(match self.embedder {
            EmbedderKind::Hash => Arc::new(HashEmbedder::new(self.embed_dim)),
            EmbedderKind::Http => match &self.embed_url {
                Some(url) => Arc::new(HttpEmbedder::new(
                    url.clone(),
                    std::env::var(crate::embedding::EMBED_KEY_ENV)
                        .ok()
                        .filter(|t| !t.is_empty()),
                    self.embed_dim,
                )?),
                None => Arc::new(HttpEmbedder::from_env(self.embed_dim)?),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = EngineConfig::default();
        assert_eq!(c.coref_threshold, 0.8);
        assert_eq!(c.coref_k, 5);
        assert_eq!(c.prune_k, Some(30));
        assert_eq!(c.max_hops, 2);
        assert_eq!(c.prompt_mode, PromptMode::ZeroShot);
        c.validate().unwrap();
    }

    #[test]
    fn apply_and_validate() {
        let mut c = EngineConfig::default();
        c.apply("max_hops", "3").unwrap();
        c.apply("prune_k", "none").unwrap();
        c.apply("merge_order", "score-interleave").unwrap();
        c.apply("post_completion", "off").unwrap();
        c.apply("prompt_mode", "one-shot").unwrap();
        assert_eq!(c.max_hops, 3);
        assert_eq!(c.prune_k, None);
        assert!(!c.post_completion);
        assert_eq!(c.prompt_mode, PromptMode::OneShot);
        assert!(c.apply("max_hops", "two").is_err());
        assert!(c.apply("bogus", "1").is_err());
        c.apply("max_hops", "4").unwrap();
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.apply("coref_threshold", "1.5").unwrap();
        assert!(c.validate().is_err());
        let mut c = EngineConfig::default();
        c.apply("llm_backend", "scripted").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn env_layer_ignores_unrelated_variables() {
        let mut c = EngineConfig::default();
        c.apply_env([
            ("PATHTRACK_MAX_HOPS".to_string(), "1".to_string()),
            ("PATHTRACK_LLM_API_KEY".to_string(), "secret".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(c.max_hops, 1);
        assert!(!c.to_json().to_string().contains("secret"));
    }
}
