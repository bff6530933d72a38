use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::path::{expandable_nodes, render, Path};
use crate::embedding::{cosine_sim, Embedder, EmbeddingIndex};
use crate::error::{Error, Result};
use crate::indexer::{normalize_entity, CoreferenceTable, KnowledgeGraph};

/// The KG entity chosen for one query entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMatch {
    pub query_entity: String,
    pub entity: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub matches: Vec<SeedMatch>,
    /// Matched entities plus their coreference sets.
    pub nodes: BTreeSet<String>,
}

/// Nearest KG entity for each query entity, widened by coreference sets.
/// Query entities are embedded in canonical form, as KG entities are.
pub fn select_seed_nodes(
    query_entities: &[String],
    kg: &KnowledgeGraph,
    entity_vectors: &EmbeddingIndex,
    coref: &CoreferenceTable,
    embedder: &dyn Embedder,
) -> Result<Seeds> {
    if kg.entities.is_empty() || entity_vectors.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if query_entities.is_empty() {
        return Err(Error::Precondition("no query entities to seed from".into()));
    }
    let texts: Vec<String> = query_entities
        .iter()
        .map(|q| normalize_entity(q).unwrap_or_else(|_| q.trim().to_string()))
        .collect();
    let vectors = embedder.embed(&texts)?;
    let mut seeds = Seeds::default();
    for (query_entity, v) in query_entities.iter().zip(&vectors) {
        let Some((entity, score)) = entity_vectors.top_k(v, 1)?.into_iter().next() else {
            continue;
        };
        seeds.nodes.insert(entity.clone());
        seeds
            .nodes
            .extend(coref.neighbors(&entity).map(str::to_string));
        seeds.matches.push(SeedMatch {
            query_entity: query_entity.clone(),
            entity,
            score,
        });
    }
    Ok(seeds)
}

/// Drops later candidates that repeat an earlier one's triple/direction
/// multiset or rendering.
pub fn dedup_paths(candidates: Vec<Path>, kg: &KnowledgeGraph) -> Vec<Path> {
    let mut identities = HashSet::new();
    let mut renderings = HashSet::new();
    candidates
        .into_iter()
        .filter(|p| {
            let fresh_identity = identities.insert(p.identity(kg));
            let fresh_render = renderings.insert(render(p, kg));
            fresh_identity && fresh_render
        })
        .collect()
}

/// One single-segment path per triple incident to each seed.
pub fn seed_candidates(seeds: &BTreeSet<String>, kg: &KnowledgeGraph) -> Vec<Path> {
    let raw = seeds
        .iter()
        .flat_map(|s| {
            kg.triple_indices_of(s)
                .iter()
                .map(move |&ti| Path::start(kg, ti, s))
        })
        .collect();
    dedup_paths(raw, kg)
}

/// Candidates for the next hop: the carried-over valid paths followed by
/// every one-segment extension of the expand paths. An extension may start
/// at an expandable node or at any coreferent of it, and never reuses a
/// triple already on the path.
pub fn expand(
    valid_paths: &[Path],
    expand_paths: &[Path],
    kg: &KnowledgeGraph,
    coref: &CoreferenceTable,
) -> Vec<Path> {
    let mut raw: Vec<Path> = valid_paths.to_vec();
    for path in expand_paths {
        for node in expandable_nodes(path, kg) {
            let starts = std::iter::once(node.as_str()).chain(coref.neighbors(&node));
            for start in starts {
                for &ti in kg.triple_indices_of(start) {
                    if !path.contains_triple(ti) {
                        raw.push(path.extended(kg, ti, start));
                    }
                }
            }
        }
    }
    dedup_paths(raw, kg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPath {
    pub path: Path,
    pub rendering: String,
    pub score: f64,
}

/// Candidates ranked by similarity of their rendering to `goal_text`, best
/// first with ties broken by path id, cut to `k` (`None` keeps all).
pub fn prune(
    candidates: &[Path],
    goal_text: &str,
    k: Option<usize>,
    kg: &KnowledgeGraph,
    embedder: &dyn Embedder,
) -> Result<Vec<ScoredPath>> {
    if goal_text.trim().is_empty() {
        return Err(Error::Precondition("pruning needs a non-empty goal".into()));
    }
    if k == Some(0) {
        return Err(Error::Precondition("prune k must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let renderings: Vec<String> = candidates.iter().map(|p| render(p, kg)).collect();
    let mut texts = Vec::with_capacity(renderings.len() + 1);
    texts.push(goal_text.to_string());
    texts.extend(renderings.iter().cloned());
    let vectors = embedder.embed(&texts)?;
    let goal = &vectors[0];
    let mut scored = candidates
        .iter()
        .zip(renderings)
        .zip(&vectors[1..])
        .map(|((path, rendering), v)| {
            Ok(ScoredPath {
                path: path.clone(),
                rendering,
                score: cosine_sim(goal, v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| rank(a.score, &a.path.path_id, b.score, &b.path.path_id));
    if let Some(k) = k {
        scored.truncate(k);
    }
    Ok(scored)
}

fn rank(sa: f64, ia: &str, sb: f64, ib: &str) -> Ordering {
    sb.total_cmp(&sa).then_with(|| ia.cmp(ib))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{HashEmbedder, Vector};
    use crate::generator::Extraction;
    use std::collections::BTreeMap;

    fn kg_of(triples: &[(&str, &str, &str)]) -> KnowledgeGraph {
        let ex = Extraction {
            entities: vec![],
            triples: triples
                .iter()
                .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
                .collect(),
        };
        KnowledgeGraph::from_extractions([("d", &ex)])
    }

    fn phone_kg() -> KnowledgeGraph {
        kg_of(&[
            ("Andy Rubin", "created", "Android"),
            ("Andy Rubin", "founded", "Essential"),
            ("Essential", "acquired by", "Nothing"),
            ("Carl Pei", "founded", "Nothing"),
        ])
    }

    fn seeds(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hop_zero_fans_out_over_incident_triples() {
        let kg = kg_of(&[
            ("x", "r1", "a"),
            ("x", "r2", "b"),
            ("c", "r3", "x"),
            ("a", "r4", "b"),
        ]);
        assert_eq!(seed_candidates(&seeds(&["x"]), &kg).len(), 3);
        let kg = phone_kg();
        let cands: Vec<String> = seed_candidates(&seeds(&["andy rubin"]), &kg)
            .iter()
            .map(|p| render(p, &kg))
            .collect();
        assert!(cands.contains(&"(andy rubin) –created→ (android)".to_string()));
        assert!(cands.contains(&"(andy rubin) –founded→ (essential)".to_string()));
    }

    #[test]
    fn two_adjacent_seeds_share_an_edge_once_per_direction() {
        let kg = kg_of(&[("a", "r", "b")]);
        let c = seed_candidates(&seeds(&["a", "b"]), &kg);
        let ids: Vec<&str> = c.iter().map(|p| p.path_id.as_str()).collect();
        assert_eq!(ids, vec!["0f", "0r"]);
    }

    /// Tree where node `n` has children `n.0 .. n.{b-1}`.
    fn tree(b: usize, depth: usize) -> KnowledgeGraph {
        let mut triples = Vec::new();
        let mut frontier = vec!["n".to_string()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for parent in &frontier {
                for i in 0..b {
                    let child = format!("{parent}.{i}");
                    triples.push((parent.clone(), format!("has{i}"), child.clone()));
                    next.push(child);
                }
            }
            frontier = next;
        }
        let ex = Extraction {
            entities: vec![],
            triples,
        };
        KnowledgeGraph::from_extractions([("d", &ex)])
    }

    #[test]
    fn hop_one_count_matches_branching_formula() {
        for b in [2, 3, 5] {
            let kg = tree(b, 3);
            let hop0 = seed_candidates(&seeds(&["n"]), &kg);
            assert_eq!(hop0.len(), b);
            let exp = &hop0[..2];
            let val = &hop0[1..];
            let next = expand(val, exp, &kg, &CoreferenceTable::default());
            // Expand paths end at depth-1 nodes, each with b children and one
            // parent edge already on the path.
            assert_eq!(next.len(), exp.len() * b + val.len());
            assert!(next.iter().all(|p| p.len() <= 2));
            for v in val {
                assert!(next.contains(v));
            }
        }
    }

    #[test]
    fn coreference_bridges_expansion() {
        let kg = kg_of(&[("a", "r", "nothing"), ("nothing inc", "s", "z")]);
        let mut coref = CoreferenceTable::default();
        coref
            .sets
            .insert("nothing".into(), vec![("nothing inc".into(), 0.9)]);
        let start = seed_candidates(&seeds(&["a"]), &kg);
        let next = expand(&[], &start, &kg, &coref);
        assert_eq!(next.len(), 1);
        assert_eq!(
            render(&next[0], &kg),
            "(a) –r→ (nothing) ≈ (nothing inc) –s→ (z)"
        );
        assert!(next[0].is_well_formed(&kg, |x, y| coref.is_coreferent(x, y)));
    }

    #[test]
    fn expansion_never_repeats_a_triple() {
        let kg = kg_of(&[("a", "r", "b"), ("b", "s", "a")]);
        let start = seed_candidates(&seeds(&["a"]), &kg);
        let next = expand(&[], &start, &kg, &CoreferenceTable::default());
        for p in &next {
            let set: BTreeSet<usize> = p.segments.iter().map(|s| s.triple_index).collect();
            assert_eq!(set.len(), p.len());
        }
        assert_eq!(next.len(), 2);
    }

    fn brute_prune(
        cands: &[Path],
        goal: &str,
        k: usize,
        kg: &KnowledgeGraph,
        e: &HashEmbedder,
    ) -> Vec<String> {
        let g = e.embed_text(goal);
        let mut rows: Vec<(f64, String)> = cands
            .iter()
            .map(|p| {
                (
                    cosine_sim(&g, &e.embed_text(&render(p, kg))).unwrap(),
                    p.path_id.clone(),
                )
            })
            .collect();
        rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        rows.into_iter().take(k).map(|r| r.1).collect()
    }

    #[test]
    fn prune_matches_brute_force_sort() {
        let kg = tree(10, 2);
        let hop0 = seed_candidates(&seeds(&["n"]), &kg);
        let cands = expand(&[], &hop0, &kg, &CoreferenceTable::default());
        assert_eq!(cands.len(), 100);
        let e = HashEmbedder::default();
        let got: Vec<String> = prune(&cands, "n.3 has7", Some(10), &kg, &e)
            .unwrap()
            .into_iter()
            .map(|s| s.path.path_id)
            .collect();
        assert_eq!(got, brute_prune(&cands, "n.3 has7", 10, &kg, &e));
    }

    #[test]
    fn prune_keeps_everything_when_k_is_large() {
        let kg = phone_kg();
        let cands = seed_candidates(&seeds(&["andy rubin", "nothing"]), &kg);
        assert_eq!(cands.len(), 4);
        let e = HashEmbedder::default();
        let out = prune(&cands, "who founded essential", Some(30), &kg, &e).unwrap();
        let got: BTreeSet<String> = out.iter().map(|s| s.path.path_id.clone()).collect();
        let want: BTreeSet<String> = cands.iter().map(|p| p.path_id.clone()).collect();
        assert_eq!(got, want);
        assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(prune(&cands, "  ", Some(3), &kg, &e).is_err());
        assert!(prune(&cands, "q", Some(0), &kg, &e).is_err());
    }

    #[derive(Debug)]
    struct Fixed(BTreeMap<String, Vec<f64>>);

    impl Embedder for Fixed {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vector>> {
            texts
                .iter()
                .map(|t| Vector::new(self.0.get(t).cloned().unwrap_or(vec![0.0, 0.0, 1.0])))
                .collect()
        }
        fn dim(&self) -> usize {
            3
        }
        fn id(&self) -> String {
            "fixed".into()
        }
    }

    #[test]
    fn seeds_take_nearest_entity_and_its_coreference_set() {
        let kg = kg_of(&[("andy rubin", "created", "android"), ("rubin", "x", "y")]);
        let keys: Vec<String> = kg.entities.keys().cloned().collect();
        let table: BTreeMap<String, Vec<f64>> = [
            ("andy rubin", vec![1.0, 0.0, 0.0]),
            ("rubin", vec![0.9, 0.1, 0.0]),
            ("android", vec![0.0, 1.0, 0.0]),
            ("y", vec![0.0, 0.0, 1.0]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let e = Fixed(table);
        let vi = EmbeddingIndex::new(keys.clone(), e.embed(&keys).unwrap(), true).unwrap();
        let coref = crate::indexer::build_coreference(&vi, 0.8, 5).unwrap();
        let s = select_seed_nodes(&["Andy Rubin".to_string()], &kg, &vi, &coref, &e).unwrap();
        assert_eq!(s.matches[0].entity, "andy rubin");
        assert!((s.matches[0].score - 1.0).abs() < 1e-12);
        assert_eq!(s.nodes, seeds(&["andy rubin", "rubin"]));
        let empty = KnowledgeGraph::default();
        assert!(matches!(
            select_seed_nodes(&["x".into()], &empty, &EmbeddingIndex::empty(3), &coref, &e),
            Err(Error::EmptyGraph)
        ));
    }
}
