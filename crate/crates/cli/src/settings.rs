//! Config layering: defaults, then `PATHTRACK_*` environment variables,
//! then the config file, then command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use pathtrack::EngineConfig;

/// A mistake in how the tool was invoked rather than a runtime failure.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Flags that override config keys. Every flag is global.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// openai or scripted.
    #[arg(long, global = true)]
    pub llm_backend: Option<String>,
    #[arg(long, global = true)]
    pub llm_base_url: Option<String>,
    #[arg(long, global = true)]
    pub llm_model: Option<String>,
    /// JSON script of canned replies for the scripted backend.
    #[arg(long, global = true)]
    pub llm_script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub templates_dir: Option<PathBuf>,
    /// hash or http.
    #[arg(long, global = true)]
    pub embedder: Option<String>,
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    #[arg(long, global = true)]
    pub embed_url: Option<String>,
    #[arg(long, global = true)]
    pub coref_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub coref_k: Option<usize>,
    #[arg(long, global = true, conflicts_with = "no_prune")]
    pub prune_k: Option<usize>,
    /// Present every candidate to the tracker.
    #[arg(long, global = true)]
    pub no_prune: bool,
    #[arg(long, global = true)]
    pub max_hops: Option<usize>,
    /// zero_shot or one_shot.
    #[arg(long, global = true)]
    pub prompt_mode: Option<String>,
    /// path-first or score-interleave.
    #[arg(long, global = true)]
    pub merge_order: Option<String>,
    #[arg(long, global = true)]
    pub retrieval_limit: Option<usize>,
    #[arg(long, global = true)]
    pub second_stage_k: Option<usize>,
    #[arg(long, global = true)]
    pub qa_top_docs: Option<usize>,
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    #[arg(long, global = true, conflicts_with = "no_chunking")]
    pub max_chunk_tokens: Option<usize>,
    #[arg(long, global = true)]
    pub no_chunking: bool,
    #[arg(long, global = true)]
    pub retries: Option<usize>,
    /// Skip the second-stage retrieval.
    #[arg(long, global = true)]
    pub no_completion: bool,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |key: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((key, v));
            }
        };
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("llm_backend", self.llm_backend.clone());
        put("llm_base_url", self.llm_base_url.clone());
        put("llm_model", self.llm_model.clone());
        put("llm_script", show(&self.llm_script));
        put("templates_dir", show(&self.templates_dir));
        put("embedder", self.embedder.clone());
        put("embed_dim", self.embed_dim.map(|v| v.to_string()));
        put("embed_url", self.embed_url.clone());
        put(
            "coref_threshold",
            self.coref_threshold.map(|v| v.to_string()),
        );
        put("coref_k", self.coref_k.map(|v| v.to_string()));
        put("prune_k", self.prune_k.map(|v| v.to_string()));
        put("prune_k", self.no_prune.then(|| "none".to_string()));
        put("max_hops", self.max_hops.map(|v| v.to_string()));
        put("prompt_mode", self.prompt_mode.clone());
        put("merge_order", self.merge_order.clone());
        put(
            "retrieval_limit",
            self.retrieval_limit.map(|v| v.to_string()),
        );
        put("second_stage_k", self.second_stage_k.map(|v| v.to_string()));
        put("qa_top_docs", self.qa_top_docs.map(|v| v.to_string()));
        put("concurrency", self.concurrency.map(|v| v.to_string()));
        put(
            "max_chunk_tokens",
            self.max_chunk_tokens.map(|v| v.to_string()),
        );
        put(
            "max_chunk_tokens",
            self.no_chunking.then(|| "none".to_string()),
        );
        put("retries", self.retries.map(|v| v.to_string()));
        put(
            "post_completion",
            self.no_completion.then(|| "false".to_string()),
        );
        out
    }
}

/// Reads a flat TOML table into `(key, value)` pairs.
fn file_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = raw
        .parse()
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    table
        .into_iter()
        .map(|(k, v)| {
            let text = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => {
                    return Err(usage(format!(
                        "{}: {k} must be a string, number or boolean, got {}",
                        path.display(),
                        other.type_str()
                    )))
                }
            };
            Ok((k, text))
        })
        .collect()
}

pub fn resolve<I>(env: I, file: Option<&Path>, flags: &Overrides) -> Result<EngineConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut config = EngineConfig::default();
    config.apply_env(env)?;
    if let Some(path) = file {
        for (key, value) in file_pairs(path)? {
            config
                .apply(&key, &value)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
    }
    for (key, value) in flags.pairs() {
        config
            .apply(key, &value)
            .map_err(|e| usage(format!("--{}: {e}", key.replace('_', "-"))))?;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}
