//! Hop-wise path tracking: seed, expand, prune, and let the model decide
//! which paths hold and which to grow.

mod expand;
mod path;
mod trace;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::embedding::Embedder;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::indexer::Index;

pub use expand::{
    dedup_paths, expand, prune, seed_candidates, select_seed_nodes, ScoredPath, SeedMatch, Seeds,
};
pub use path::{expandable_nodes, render, Path, PathSegment};
pub use trace::{HopRecord, PathRecord, PresentedCandidate, Trace, TrackerDecision};

pub const DEFAULT_PRUNE_K: usize = 30;
pub const DEFAULT_MAX_HOPS: usize = 2;
pub const MAX_HOPS_LIMIT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackConfig {
    /// Tracker rounds; paths grow to at most this many segments.
    pub max_hops: usize,
    /// Candidates kept per hop; `None` disables pruning.
    pub prune_k: Option<usize>,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            max_hops: DEFAULT_MAX_HOPS,
            prune_k: Some(DEFAULT_PRUNE_K),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AnswerFound,
    MaxHops,
    NoCandidates,
    Degraded,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::AnswerFound => "answer_found",
            StopReason::MaxHops => "max_hops",
            StopReason::NoCandidates => "no_candidates",
            StopReason::Degraded => "degraded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub hop: usize,
    pub valid_paths: Vec<Path>,
    pub expand_paths: Vec<Path>,
    pub chain: String,
    pub goal: String,
    pub continue_flag: bool,
}

impl TrackState {
    fn new() -> Self {
        TrackState {
            hop: 0,
            valid_paths: Vec::new(),
            expand_paths: Vec::new(),
            chain: String::new(),
            goal: String::new(),
            continue_flag: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    /// In the order the tracker last listed them.
    pub final_valid_paths: Vec<Path>,
    pub last_chain: String,
    pub last_goal: String,
    /// Number of tracker rounds completed.
    pub hops_used: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracked {
    pub result: TrackResult,
    pub trace: Trace,
}

fn path_record(p: &Path, index: &Index) -> PathRecord {
    PathRecord {
        path_id: p.path_id.clone(),
        rendering: render(p, &index.kg),
        nodes: p.nodes(&index.kg),
        source_doc_ids: p
            .source_docs(&index.kg)
            .into_iter()
            .map(str::to_string)
            .collect(),
    }
}

/// Runs the tracking loop for one question.
///
/// Each round builds candidates (seed edges at hop 0, otherwise carried
/// valid paths plus extensions of the paths marked for expansion), prunes
/// them against the current goal and asks the tracker. The loop ends when
/// the tracker reports the answer found, nothing is left to expand, or the
/// round budget is spent. A backend failure ends it early with the last
/// valid paths kept.
pub fn track(
    question: &str,
    index: &Index,
    generator: &Generator,
    embedder: &dyn Embedder,
    config: &TrackConfig,
) -> Result<Tracked> {
    if question.trim().is_empty() {
        return Err(Error::Precondition("question is empty".into()));
    }
    if !(1..=MAX_HOPS_LIMIT).contains(&config.max_hops) {
        return Err(Error::Config(format!(
            "max_hops must be between 1 and {MAX_HOPS_LIMIT}, got {}",
            config.max_hops
        )));
    }
    if config.prune_k == Some(0) {
        return Err(Error::Config("prune_k must be at least 1".into()));
    }
    let kg = &index.kg;
    let mut trace = Trace {
        question: question.to_string(),
        query_entities: Vec::new(),
        seeds: Vec::new(),
        seed_nodes: Vec::new(),
        hops: Vec::new(),
        stop_reason: StopReason::NoCandidates,
        final_valid_paths: Vec::new(),
        last_chain: String::new(),
        last_goal: String::new(),
        error: None,
        config: serde_json::Value::Null,
        q_prime: None,
        ranked: Vec::new(),
    };
    let mut state = TrackState::new();
    let mut hops_used = 0;

    let stop_reason = 'run: {
        let query_entities = match generator.extract_query_entities(question) {
            Ok(q) => q,
            Err(e) => {
                warn!(error = %e, "query entity extraction failed");
                trace.error = Some(e.to_string());
                break 'run StopReason::Degraded;
            }
        };
        trace.query_entities = query_entities.clone();
        if kg.entities.is_empty() || index.entity_vectors.is_empty() {
            break 'run StopReason::NoCandidates;
        }
        let seeds = select_seed_nodes(
            &query_entities,
            kg,
            &index.entity_vectors,
            &index.coref,
            embedder,
        )?;
        trace.seeds = seeds.matches.clone();
        trace.seed_nodes = seeds.nodes.iter().cloned().collect();

        loop {
            let candidates = if state.hop == 0 {
                seed_candidates(&seeds.nodes, kg)
            } else {
                expand(&state.valid_paths, &state.expand_paths, kg, &index.coref)
            };
            if candidates.is_empty() {
                break 'run StopReason::NoCandidates;
            }
            let goal = if state.hop == 0 || state.goal.trim().is_empty() {
                question.to_string()
            } else {
                state.goal.clone()
            };
            let pruned = prune(&candidates, &goal, config.prune_k, kg, embedder)?;
            let renderings: Vec<String> = pruned.iter().map(|s| s.rendering.clone()).collect();
            let mut record = HopRecord {
                hop: state.hop,
                goal,
                candidate_ids: candidates.iter().map(|p| p.path_id.clone()).collect(),
                presented: pruned
                    .iter()
                    .enumerate()
                    .map(|(i, s)| PresentedCandidate {
                        number: i + 1,
                        path_id: s.path.path_id.clone(),
                        rendering: s.rendering.clone(),
                        score: s.score,
                    })
                    .collect(),
                rendered_chars: renderings.iter().map(|r| r.chars().count()).sum(),
                tracker: None,
            };
            debug!(
                hop = state.hop,
                candidates = candidates.len(),
                presented = pruned.len(),
                "tracking hop"
            );

            let out = match generator.track_paths(question, &renderings, &state.chain) {
                Ok(out) => out,
                Err(e) => {
                    warn!(hop = state.hop, error = %e, "tracker call failed");
                    trace.error = Some(e.to_string());
                    trace.hops.push(record);
                    break 'run StopReason::Degraded;
                }
            };
            hops_used += 1;
            let pick = |ids: &[usize]| -> Vec<Path> {
                ids.iter().map(|&i| pruned[i].path.clone()).collect()
            };
            state.valid_paths = pick(&out.valid);
            state.expand_paths = pick(&out.expand);
            if !out.chain.trim().is_empty() {
                state.chain = out.chain.trim().to_string();
            }
            state.goal = out.requirement.clone();
            state.continue_flag = out.continue_flag;
            record.tracker = Some(TrackerDecision {
                chain: out.chain.clone(),
                valid: state
                    .valid_paths
                    .iter()
                    .map(|p| p.path_id.clone())
                    .collect(),
                expand: state
                    .expand_paths
                    .iter()
                    .map(|p| p.path_id.clone())
                    .collect(),
                requirement: out.requirement.clone(),
                continue_flag: out.continue_flag,
                degraded: out.degraded,
            });
            trace.hops.push(record);

            if !out.continue_flag {
                break 'run StopReason::AnswerFound;
            }
            if state.expand_paths.is_empty() {
                break 'run StopReason::NoCandidates;
            }
            if state.hop + 1 >= config.max_hops {
                break 'run StopReason::MaxHops;
            }
            state.hop += 1;
        }
    };

    trace.stop_reason = stop_reason;
    trace.final_valid_paths = state
        .valid_paths
        .iter()
        .map(|p| path_record(p, index))
        .collect();
    trace.last_chain = state.chain.clone();
    trace.last_goal = state.goal.clone();
    Ok(Tracked {
        result: TrackResult {
            final_valid_paths: state.valid_paths,
            last_chain: state.chain,
            last_goal: state.goal,
            hops_used,
            stop_reason,
        },
        trace,
    })
}
