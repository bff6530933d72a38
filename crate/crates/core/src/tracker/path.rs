use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::indexer::KnowledgeGraph;

/// One triple appended to a path, and the node it was appended from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathSegment {
    pub triple_index: usize,
    pub entered_via: String,
}

impl PathSegment {
    /// True when the triple is walked head to tail.
    pub fn is_forward(&self, kg: &KnowledgeGraph) -> bool {
        kg.triples[self.triple_index].head == self.entered_via
    }

    /// The node this segment leads to.
    pub fn exit<'a>(&self, kg: &'a KnowledgeGraph) -> &'a str {
        let t = &kg.triples[self.triple_index];
        if t.head == self.entered_via {
            &t.tail
        } else {
            &t.head
        }
    }
}

/// A chain of triple segments grown outwards from a seed node.
///
/// A segment normally enters through the previous segment's exit node. It may
/// also enter through a coreferent of that node, which renders as a `≈` bridge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Path {
    pub segments: Vec<PathSegment>,
    pub origin_seed: String,
    pub path_id: String,
}

fn segment_id(kg: &KnowledgeGraph, seg: &PathSegment) -> String {
    let dir = if seg.is_forward(kg) { 'f' } else { 'r' };
    format!("{}{dir}", seg.triple_index)
}

impl Path {
    /// Single-segment path starting at `seed`, which must be an endpoint of
    /// the triple.
    pub fn start(kg: &KnowledgeGraph, triple_index: usize, seed: &str) -> Path {
        let seg = PathSegment {
            triple_index,
            entered_via: seed.to_string(),
        };
        debug_assert!(kg.triples[triple_index].other_end(seed).is_some());
        Path {
            path_id: segment_id(kg, &seg),
            segments: vec![seg],
            origin_seed: seed.to_string(),
        }
    }

    /// Copy with one more segment entering the triple through `via`.
    pub fn extended(&self, kg: &KnowledgeGraph, triple_index: usize, via: &str) -> Path {
        let seg = PathSegment {
            triple_index,
            entered_via: via.to_string(),
        };
        debug_assert!(kg.triples[triple_index].other_end(via).is_some());
        let mut path = self.clone();
        path.path_id = format!("{}-{}", self.path_id, segment_id(kg, &seg));
        path.segments.push(seg);
        path
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn contains_triple(&self, triple_index: usize) -> bool {
        self.segments.iter().any(|s| s.triple_index == triple_index)
    }

    pub fn exit<'a>(&self, kg: &'a KnowledgeGraph) -> Option<&'a str> {
        self.segments.last().map(|s| s.exit(kg))
    }

    /// Nodes in traversal order: each segment's entry (when it differs from
    /// the previous node) and its exit.
    pub fn nodes(&self, kg: &KnowledgeGraph) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for seg in &self.segments {
            if out.last() != Some(&seg.entered_via) {
                out.push(seg.entered_via.clone());
            }
            out.push(seg.exit(kg).to_string());
        }
        out
    }

    /// Dedup key: the sorted multiset of (triple, direction).
    pub fn identity(&self, kg: &KnowledgeGraph) -> Vec<(usize, bool)> {
        let mut key: Vec<(usize, bool)> = self
            .segments
            .iter()
            .map(|s| (s.triple_index, s.is_forward(kg)))
            .collect();
        key.sort_unstable();
        key
    }

    /// Source documents of the segments, in path order (with repeats).
    pub fn source_docs<'a>(&self, kg: &'a KnowledgeGraph) -> Vec<&'a str> {
        self.segments
            .iter()
            .map(|s| kg.triples[s.triple_index].source_doc_id.as_str())
            .collect()
    }

    /// Consecutive segments share a node (directly or via `bridged`), every
    /// entry is an endpoint of its triple, and no triple repeats.
    pub fn is_well_formed(
        &self,
        kg: &KnowledgeGraph,
        bridged: impl Fn(&str, &str) -> bool,
    ) -> bool {
        let mut seen = BTreeSet::new();
        let mut prev_exit: Option<&str> = None;
        for seg in &self.segments {
            let Some(t) = kg.triples.get(seg.triple_index) else {
                return false;
            };
            if t.other_end(&seg.entered_via).is_none() || !seen.insert(seg.triple_index) {
                return false;
            }
            match prev_exit {
                None if seg.entered_via != self.origin_seed => return false,
                Some(p) if p != seg.entered_via && !bridged(p, &seg.entered_via) => return false,
                _ => {}
            }
            prev_exit = Some(seg.exit(kg));
        }
        !self.segments.is_empty()
    }
}

/// Nodes through which a new segment may be appended: the exit of the last
/// segment, unless the path has already passed through it.
pub fn expandable_nodes(path: &Path, kg: &KnowledgeGraph) -> BTreeSet<String> {
    let mut nodes = path.nodes(kg);
    let mut out = BTreeSet::new();
    if let Some(exit) = nodes.pop() {
        if !nodes.contains(&exit) {
            out.insert(exit);
        }
    }
    out
}

/// Text form shown to the tracker and embedded for pruning, e.g.
/// `(andy rubin) –created→ (android)` or `(android) ←created– (andy rubin)`.
pub fn render(path: &Path, kg: &KnowledgeGraph) -> String {
    let mut out = String::new();
    let mut last: Option<&str> = None;
    for seg in &path.segments {
        let t = &kg.triples[seg.triple_index];
        match last {
            None => out.push_str(&format!("({})", seg.entered_via)),
            Some(prev) if prev != seg.entered_via => {
                out.push_str(&format!(" ≈ ({})", seg.entered_via))
            }
            Some(_) => {}
        }
        let exit = seg.exit(kg);
        if seg.is_forward(kg) {
            out.push_str(&format!(" –{}→ ({exit})", t.relation));
        } else {
            out.push_str(&format!(" ←{}– ({exit})", t.relation));
        }
        last = Some(exit);
    }
    out
}
