//! Benchmark runner: recall@k, EM/F1, token usage and seed/path mismatch
//! diagnostics.

mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::corpus::QaRecord;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::generator::{LedgerSnapshot, TokenLedger};
use crate::indexer::Index;
use crate::tracker::{StopReason, Trace};

pub use metrics::{exact_match, f1, normalize_answer, recall_at_k};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Retrieval,
    Qa,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "retrieval" => Ok(EvalMode::Retrieval),
            "qa" => Ok(EvalMode::Qa),
            other => Err(Error::Config(format!(
                "mode must be retrieval or qa, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub seed_mismatch: bool,
    pub path_mismatch: bool,
}

/// Entities extracted from the gold documents (or chunks cut from them).
pub fn gold_entities<'a>(index: &'a Index, gold_docs: &BTreeSet<String>) -> BTreeSet<&'a str> {
    let chunk_ids: BTreeSet<&str> = index
        .documents
        .iter()
        .filter(|d| gold_docs.contains(d.source_id()))
        .map(|d| d.doc_id.as_str())
        .collect();
    index
        .kg
        .entities
        .values()
        .filter(|e| {
            e.source_doc_ids
                .iter()
                .any(|d| chunk_ids.contains(d.as_str()))
        })
        .map(|e| e.canonical_name.as_str())
        .collect()
}

/// Whether the seeds, and separately the nodes on the final valid paths,
/// miss every entity of the gold documents.
pub fn mismatch_diagnostics(
    trace: Option<&Trace>,
    index: &Index,
    gold_docs: &BTreeSet<String>,
) -> Result<Mismatch> {
    let trace =
        trace.ok_or_else(|| Error::Precondition("mismatch diagnostics need a trace".into()))?;
    let gold = gold_entities(index, gold_docs);
    let seed_mismatch = !trace.seed_nodes.iter().any(|s| gold.contains(s.as_str()));
    let path_mismatch = !trace
        .final_valid_paths
        .iter()
        .flat_map(|p| &p.nodes)
        .any(|n| gold.contains(n.as_str()));
    Ok(Mismatch {
        seed_mismatch,
        path_mismatch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    pub recall_at: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub ranked: Vec<String>,
    pub tokens: LedgerSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<Mismatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    pub hops_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub queries: usize,
    pub failed: usize,
    pub recall_at: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    /// Token usage summed over queries.
    pub tokens: LedgerSnapshot,
    pub mean_tokens_per_query: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Over queries that produced a trace.
    pub seed_mismatch_rate: f64,
    pub path_mismatch_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub mode: EvalMode,
    pub ks: Vec<usize>,
    pub config: serde_json::Value,
    pub rows: Vec<QueryRow>,
    pub aggregates: Aggregates,
    pub diagnostics: Diagnostics,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub ks: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EvalMode::Retrieval,
            ks: vec![2, 5, 10],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Per-query traces keyed by query id.
    pub traces: BTreeMap<String, Trace>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn evaluate_one(
    record: &QaRecord,
    engine: &Engine,
    options: &EvalOptions,
) -> (QueryRow, Option<Trace>) {
    let ledger = Arc::new(TokenLedger::new());
    let engine = engine.with_generator(engine.generator().with_ledger(ledger.clone()));
    let mut row = QueryRow {
        query_id: record.query_id.clone(),
        recall_at: options.ks.iter().map(|&k| (k, 0.0)).collect(),
        em: None,
        f1: None,
        answer: None,
        ranked: Vec::new(),
        tokens: LedgerSnapshot::default(),
        mismatch: None,
        stop_reason: None,
        hops_used: 0,
        error: None,
    };
    if options.mode == EvalMode::Qa {
        row.em = Some(0.0);
        row.f1 = Some(0.0);
    }
    let mut trace = None;
    let outcome = (|| -> Result<()> {
        if record.gold_doc_ids.is_empty() {
            return Err(Error::Precondition(format!(
                "record {:?} has no supporting documents",
                record.query_id
            )));
        }
        let retrieval = engine.retrieve(&record.question)?;
        row.stop_reason = Some(retrieval.track.stop_reason);
        row.hops_used = retrieval.track.hops_used;
        row.ranked = engine.source_ranking(&retrieval.result);
        for &k in &options.ks {
            row.recall_at
                .insert(k, recall_at_k(&row.ranked, &record.gold_doc_ids, k)?);
        }
        row.mismatch = Some(mismatch_diagnostics(
            Some(&retrieval.trace),
            engine.index(),
            &record.gold_doc_ids,
        )?);
        trace = Some(retrieval.trace.clone());
        if options.mode == EvalMode::Qa {
            let contexts = engine.contexts(&retrieval.result);
            let answer = engine.generator().answer(&record.question, &contexts)?;
            row.em = Some(exact_match(&answer, &record.gold_answer));
            row.f1 = Some(f1(&answer, &record.gold_answer));
            row.answer = Some(answer);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        warn!(query_id = %record.query_id, error = %e, "query failed");
        row.error = Some(e.to_string());
        row.recall_at.values_mut().for_each(|v| *v = 0.0);
        if options.mode == EvalMode::Qa {
            row.em = Some(0.0);
            row.f1 = Some(0.0);
        }
    }
    row.tokens = ledger.snapshot();
    (row, trace)
}

/// Runs every record through `engine` and scores it. A failing query
/// becomes a zero-score row with its error noted; the run continues.
pub fn evaluate(
    records: &[QaRecord],
    engine: &Engine,
    options: &EvalOptions,
) -> Result<Evaluation> {
    if options.ks.is_empty() || options.ks.contains(&0) {
        return Err(Error::Config("recall cutoffs must be positive".into()));
    }
    let threads = if engine.generator().order_sensitive() {
        1
    } else {
        engine.config().concurrency.max(1)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut results: Vec<(QueryRow, Option<Trace>)> = if threads == 1 {
        records
            .iter()
            .map(|r| evaluate_one(r, engine, options))
            .collect()
    } else {
        pool.install(|| {
            records
                .par_iter()
                .map(|r| evaluate_one(r, engine, options))
                .collect()
        })
    };
    results.sort_by(|a, b| a.0.query_id.cmp(&b.0.query_id));

    let mut traces = BTreeMap::new();
    let mut rows = Vec::with_capacity(results.len());
    for (row, trace) in results {
        if let Some(t) = trace {
            traces.insert(row.query_id.clone(), t);
        }
        rows.push(row);
    }

    let mut tokens = LedgerSnapshot::default();
    for r in &rows {
        tokens.merge(&r.tokens);
    }
    let qa = options.mode == EvalMode::Qa;
    let aggregates = Aggregates {
        queries: rows.len(),
        failed: rows.iter().filter(|r| r.error.is_some()).count(),
        recall_at: options
            .ks
            .iter()
            .map(|&k| (k, mean(rows.iter().map(|r| r.recall_at[&k]))))
            .collect(),
        em: qa.then(|| mean(rows.iter().filter_map(|r| r.em))),
        f1: qa.then(|| mean(rows.iter().filter_map(|r| r.f1))),
        mean_tokens_per_query: mean(
            rows.iter()
                .map(|r| (r.tokens.prompt_tokens + r.tokens.completion_tokens) as f64),
        ),
        tokens,
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let diagnostics = Diagnostics {
        seed_mismatch_rate: mean(
            rows.iter()
                .filter_map(|r| r.mismatch)
                .map(|m| flag(m.seed_mismatch)),
        ),
        path_mismatch_rate: mean(
            rows.iter()
                .filter_map(|r| r.mismatch)
                .map(|m| flag(m.path_mismatch)),
        ),
    };
    Ok(Evaluation {
        report: EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            mode: options.mode,
            ks: options.ks.clone(),
            config: engine.config().to_json(),
            rows,
            aggregates,
            diagnostics,
        },
        traces,
    })
}

pub fn run_benchmark(
    records: &[QaRecord],
    engine: &Engine,
    options: &EvalOptions,
) -> Result<EvalReport> {
    evaluate(records, engine, options).map(|e| e.report)
}
