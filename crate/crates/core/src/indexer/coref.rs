use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingIndex;
use crate::error::{Error, Result};

/// Per-entity list of similar entities (self excluded), best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoreferenceTable {
    pub sets: BTreeMap<String, Vec<(String, f64)>>,
}

impl CoreferenceTable {
    pub fn get(&self, entity: &str) -> &[(String, f64)] {
        self.sets.get(entity).map_or(&[], Vec::as_slice)
    }

    pub fn neighbors<'a>(&'a self, entity: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.get(entity).iter().map(|(n, _)| n.as_str())
    }

    pub fn is_coreferent(&self, a: &str, b: &str) -> bool {
        self.neighbors(a).any(|n| n == b)
    }
}

/// For every entity, its `k` most similar other entities, then only those
/// scoring at least `threshold`.
pub fn build_coreference(
    entities: &EmbeddingIndex,
    threshold: f64,
    k: usize,
) -> Result<CoreferenceTable> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Precondition(format!(
            "coreference threshold must be in (0, 1], got {threshold}"
        )));
    }
    if k == 0 {
        return Err(Error::Precondition(
            "coreference k must be at least 1".into(),
        ));
    }
    let rows: Vec<(String, Vec<(String, f64)>)> = entities
        .keys()
        .par_iter()
        .zip(entities.vectors().par_iter())
        .map(|(key, vector)| {
            let hits = if vector.is_zero() {
                Vec::new()
            } else {
                entities
                    .top_k(vector, k + 1)?
                    .into_iter()
                    .filter(|(other, _)| other != key)
                    .take(k)
                    .filter(|(_, score)| *score >= threshold)
                    .collect()
            };
            Ok((key.clone(), hits))
        })
        .collect::<Result<_>>()?;
    Ok(CoreferenceTable {
        sets: rows.into_iter().collect(),
    })
}
