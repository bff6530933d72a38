//! Text embeddings, cosine similarity and exact top-k search.

mod hash;
mod http;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hash::{HashEmbedder, DEFAULT_HASH_DIM};
pub use http::{HttpEmbedder, EMBED_KEY_ENV, EMBED_URL_ENV};

/// Tolerance on the L2 norm of stored vectors in a normalized index.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Precondition("vector has zero dimensions".into()));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("{} components", components.len())));
        }
        Ok(Vector(components))
    }

    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    /// Unit-length copy; zero vectors stay zero.
    pub fn normalized(&self) -> Vector {
        let norm = self.norm();
        if norm == 0.0 {
            return self.clone();
        }
        Vector(self.0.iter().map(|c| c / norm).collect())
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|c| c * factor).collect())
    }
}

/// Cosine similarity in `[-1, 1]`. Any pair involving a zero vector scores 0.
pub fn cosine_sim(a: &Vector, b: &Vector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Encodes texts into vectors of a fixed dimension.
pub trait Embedder: Send + Sync + fmt::Debug {
    /// One vector per input, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>>;

    fn dim(&self) -> usize;

    /// Identifies the backend and its parameters; persisted with an index so
    /// queries are encoded the same way the index was.
    fn id(&self) -> String;
}

pub fn embed_one(embedder: &dyn Embedder, text: &str) -> Result<Vector> {
    let mut out = embedder.embed(&[text.to_string()])?;
    out.pop()
        .ok_or_else(|| Error::Precondition("embedder returned no vector".into()))
}

/// Exact-scan vector index over string keys.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    keys: Vec<String>,
    vectors: Vec<Vector>,
    normalized: bool,
    dim: usize,
    positions: HashMap<String, usize>,
}

impl EmbeddingIndex {
    pub fn new(keys: Vec<String>, vectors: Vec<Vector>, normalize: bool) -> Result<Self> {
        if keys.len() != vectors.len() {
            return Err(Error::Precondition(format!(
                "{} keys but {} vectors",
                keys.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map_or(0, Vector::dim);
        let mut positions = HashMap::with_capacity(keys.len());
        for (i, (key, v)) in keys.iter().zip(&vectors).enumerate() {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            if v.0.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(key.clone()));
            }
            if positions.insert(key.clone(), i).is_some() {
                return Err(Error::DuplicateId(key.clone()));
            }
        }
        let vectors = if normalize {
            vectors.iter().map(Vector::normalized).collect()
        } else {
            vectors
        };
        Ok(EmbeddingIndex {
            keys,
            vectors,
            normalized: normalize,
            dim,
            positions,
        })
    }

    pub fn empty(dim: usize) -> Self {
        EmbeddingIndex {
            keys: Vec::new(),
            vectors: Vec::new(),
            normalized: true,
            dim,
            positions: HashMap::new(),
        }
    }

    /// Rebuilds an index from persisted parts without renormalizing, so
    /// stored components come back bit-for-bit. A normalized index must
    /// hold unit or zero vectors.
    pub fn from_stored(
        keys: Vec<String>,
        vectors: Vec<Vector>,
        normalized: bool,
        dim: usize,
    ) -> Result<Self> {
        let mut index = EmbeddingIndex::new(keys, vectors, false)?;
        if !index.is_empty() && index.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: index.dim,
            });
        }
        if normalized {
            if let Some(bad) = index
                .vectors
                .iter()
                .position(|v| !v.is_zero() && (v.norm() - 1.0).abs() > NORM_TOLERANCE)
            {
                return Err(Error::CorruptArchive(format!(
                    "vector {:?} is not unit length",
                    index.keys[bad]
                )));
            }
        }
        index.normalized = normalized;
        index.dim = dim;
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn get(&self, key: &str) -> Option<&Vector> {
        self.positions.get(key).map(|&i| &self.vectors[i])
    }

    /// The `k` keys most similar to `query`, best first. Equal scores are
    /// ordered by ascending key; zero vectors never appear.
    pub fn top_k(&self, query: &Vector, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::Precondition("k must be at least 1".into()));
        }
        if !self.is_empty() && query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }

        // Max-heap on "worse", so the root is the weakest retained hit.
        let mut heap: BinaryHeap<Hit<'_>> = BinaryHeap::with_capacity(k + 1);
        for (key, v) in self.keys.iter().zip(&self.vectors) {
            if v.is_zero() {
                continue;
            }
            let hit = Hit {
                score: cosine_sim(query, v)?,
                key,
            };
            if heap.len() < k {
                heap.push(hit);
            } else if let Some(worst) = heap.peek() {
                if hit < *worst {
                    heap.pop();
                    heap.push(hit);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|h| (h.key.clone(), h.score))
            .collect())
    }
}

/// Orders hits so that "less" means "ranks higher".
struct Hit<'a> {
    score: f64,
    key: &'a String,
}

impl Ord for Hit<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.key.cmp(other.key))
    }
}

impl PartialOrd for Hit<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Hit<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_sim(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let s = cosine_sim(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert_eq!(cosine_sim(&Vector::zeros(2), &v(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine_sim(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Vector::new(vec![1.0, f64::NAN]).is_err());
        assert!(Vector::new(vec![]).is_err());
    }

    #[test]
    fn top_k_basics() {
        let idx = EmbeddingIndex::new(
            vec!["b".into(), "a".into(), "z".into(), "c".into()],
            vec![
                v(&[1.0, 0.0]),
                v(&[1.0, 0.0]),
                v(&[0.0, 0.0]),
                v(&[0.0, 1.0]),
            ],
            true,
        )
        .unwrap();
        // Ties go to the smaller key; the zero vector is never returned.
        let all = idx.top_k(&v(&[2.0, 0.0]), 10).unwrap();
        assert_eq!(
            all,
            vec![("a".into(), 1.0), ("b".into(), 1.0), ("c".into(), 0.0)]
        );
        let top = idx.top_k(&v(&[0.0, 3.0]), 1).unwrap();
        assert_eq!(top, vec![("c".to_string(), 1.0)]);
        assert!(idx.top_k(&v(&[1.0, 0.0, 0.0]), 1).is_err());
        assert!(idx.top_k(&v(&[1.0, 0.0]), 0).is_err());
    }

    #[test]
    fn index_stores_unit_vectors() {
        let idx = EmbeddingIndex::new(
            vec!["x".into(), "y".into()],
            vec![v(&[3.0, 4.0]), v(&[0.0, 0.0])],
            true,
        )
        .unwrap();
        assert!((idx.get("x").unwrap().norm() - 1.0).abs() < NORM_TOLERANCE);
        assert!(idx.get("y").unwrap().is_zero());
        assert!(EmbeddingIndex::new(
            vec!["x".into(), "x".into()],
            vec![v(&[1.0]), v(&[1.0])],
            true
        )
        .is_err());
    }

    fn brute_force(idx: &EmbeddingIndex, q: &Vector, k: usize) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = idx
            .keys()
            .iter()
            .zip(idx.vectors())
            .filter(|(_, v)| !v.is_zero())
            .map(|(key, v)| (key.clone(), cosine_sim(q, v).unwrap()))
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn five_random_vectors_match_exhaustive_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let keys: Vec<String> = (0..5).map(|i| format!("k{i}")).collect();
        let vecs: Vec<Vector> = (0..5)
            .map(|_| v(&(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let idx = EmbeddingIndex::new(keys, vecs, true).unwrap();
        let q = v(&[0.3, -0.2, 0.9, 0.1]);
        assert_eq!(idx.top_k(&q, 2).unwrap(), brute_force(&idx, &q, 2));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 6),
            b in prop::collection::vec(-10.0f64..10.0, 6),
            scale in 0.01f64..100.0,
        ) {
            let (a, b) = (v(&a), v(&b));
            let ab = cosine_sim(&a, &b).unwrap();
            prop_assert!((ab - cosine_sim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((cosine_sim(&a.scaled(scale), &b).unwrap() - ab).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
            if !a.is_zero() {
                prop_assert!((cosine_sim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn top_k_matches_oracle_and_ignores_insertion_order(
            raw in prop::collection::vec(prop::collection::vec(-2i32..3, 3), 1..40),
            q in prop::collection::vec(-2i32..3, 3),
            k in 1usize..50,
            rotate in 0usize..40,
        ) {
            // Small integer grids produce plenty of exact ties.
            let keys: Vec<String> = (0..raw.len()).map(|i| format!("key{i:02}")).collect();
            let vecs: Vec<Vector> = raw.iter().map(|c| v(&c.iter().map(|&x| x as f64).collect::<Vec<_>>())).collect();
            let q = v(&q.iter().map(|&x| x as f64).collect::<Vec<_>>());
            let idx = EmbeddingIndex::new(keys.clone(), vecs.clone(), true).unwrap();
            let got = idx.top_k(&q, k).unwrap();
            prop_assert_eq!(&got, &brute_force(&idx, &q, k));

            let r = rotate % keys.len();
            let mut keys2 = keys.clone();
            let mut vecs2 = vecs.clone();
            keys2.rotate_left(r);
            vecs2.rotate_left(r);
            let idx2 = EmbeddingIndex::new(keys2, vecs2, true).unwrap();
            prop_assert_eq!(got, idx2.top_k(&q, k).unwrap());
        }
    }
}
