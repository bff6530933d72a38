use serde::{Deserialize, Serialize};

use super::expand::SeedMatch;
use super::StopReason;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresentedCandidate {
    /// 1-based number shown to the tracker.
    pub number: usize,
    pub path_id: String,
    pub rendering: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerDecision {
    pub chain: String,
    pub valid: Vec<String>,
    pub expand: Vec<String>,
    pub requirement: String,
    #[serde(rename = "continue")]
    pub continue_flag: bool,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopRecord {
    pub hop: usize,
    /// The text candidates were ranked against: the question at hop 0,
    /// the previous requirement afterwards.
    pub goal: String,
    /// Every candidate before pruning, by path id.
    pub candidate_ids: Vec<String>,
    pub presented: Vec<PresentedCandidate>,
    /// Characters of candidate text sent to the tracker this hop.
    pub rendered_chars: usize,
    pub tracker: Option<TrackerDecision>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path_id: String,
    pub rendering: String,
    pub nodes: Vec<String>,
    pub source_doc_ids: Vec<String>,
}

/// Everything a retrieval did, for inspection and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub question: String,
    pub query_entities: Vec<String>,
    pub seeds: Vec<SeedMatch>,
    pub seed_nodes: Vec<String>,
    pub hops: Vec<HopRecord>,
    pub stop_reason: StopReason,
    pub final_valid_paths: Vec<PathRecord>,
    pub last_chain: String,
    pub last_goal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Resolved engine configuration, echoed for reproducibility.
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_prime: Option<String>,
    #[serde(default)]
    pub ranked: Vec<crate::completion::RankedDoc>,
}

impl Trace {
    pub fn total_rendered_chars(&self) -> usize {
        self.hops.iter().map(|h| h.rendered_chars).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Plain-text hop-by-hop table.
    pub fn summary(&self) -> String {
        let mut out = format!("question: {}\n", self.question);
        out.push_str(&format!(
            "query entities: {}\n",
            self.query_entities.join(", ")
        ));
        for s in &self.seeds {
            out.push_str(&format!(
                "seed: {} -> {} ({:.3})\n",
                s.query_entity, s.entity, s.score
            ));
        }
        if self.seed_nodes.len() > self.seeds.len() {
            out.push_str(&format!("seed nodes: {}\n", self.seed_nodes.join(", ")));
        }
        for hop in &self.hops {
            out.push_str(&format!(
                "\nhop {}  goal: {}\n  {} candidates, {} presented, {} chars\n",
                hop.hop,
                hop.goal,
                hop.candidate_ids.len(),
                hop.presented.len(),
                hop.rendered_chars
            ));
            let decision = hop.tracker.as_ref();
            for c in &hop.presented {
                let mut marks = String::new();
                if decision.is_some_and(|d| d.valid.contains(&c.path_id)) {
                    marks.push('V');
                }
                if decision.is_some_and(|d| d.expand.contains(&c.path_id)) {
                    marks.push('E');
                }
                out.push_str(&format!(
                    "  [{:>2}] {:<2} {:.3}  {}\n",
                    c.number, marks, c.score, c.rendering
                ));
            }
            if let Some(d) = decision {
                out.push_str(&format!(
                    "  chain: {}\n  requirement: {}\n  continue: {}{}\n",
                    d.chain,
                    d.requirement,
                    d.continue_flag,
                    if d.degraded { " (degraded)" } else { "" }
                ));
            }
        }
        out.push_str(&format!("\nstop: {}\n", self.stop_reason.as_str()));
        if let Some(e) = &self.error {
            out.push_str(&format!("error: {e}\n"));
        }
        for p in &self.final_valid_paths {
            out.push_str(&format!("valid: {}\n", p.rendering));
        }
        if let Some(q) = &self.q_prime {
            out.push_str(&format!("q': {}\n", q.replace('\n', " | ")));
        }
        for (i, d) in self.ranked.iter().enumerate() {
            out.push_str(&format!(
                "{:>3}. {} ({}, {:.3})\n",
                i + 1,
                d.doc_id,
                d.provenance.as_str(),
                d.score
            ));
        }
        out
    }
}
