use super::{Embedder, Vector};
use crate::error::{Error, Result};

pub const DEFAULT_HASH_DIM: usize = 256;

const WORD_WEIGHT: f64 = 1.0;
const TRIGRAM_WEIGHT: f64 = 0.5;

/// Deterministic offline embedder: signed feature hashing of lowercased
/// words and their character trigrams, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hash embedder needs a positive dimension");
        HashEmbedder { dim }
    }

    pub fn embed_text(&self, text: &str) -> Vector {
        let mut acc = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        for word in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            self.add_feature(&mut acc, &format!("w:{word}"), WORD_WEIGHT);
            let padded: Vec<char> = format!("#{word}#").chars().collect();
            for gram in padded.windows(3) {
                let gram: String = gram.iter().collect();
                self.add_feature(&mut acc, &format!("c:{gram}"), TRIGRAM_WEIGHT);
            }
        }
        Vector(acc).normalized()
    }

    fn add_feature(&self, acc: &mut [f64], feature: &str, weight: f64) {
        let h = fnv1a64(feature.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign * weight;
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_HASH_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>> {
        texts
            .iter()
            .map(|t| {
                if t.trim().is_empty() {
                    Err(Error::Precondition("cannot embed an empty string".into()))
                } else {
                    Ok(self.embed_text(t))
                }
            })
            .collect()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("hash-v1/{}", self.dim)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine_sim;

    // Independent re-derivation of the feature hash used as the oracle.
    fn oracle(text: &str, dim: usize) -> Vec<f64> {
        fn fnv(s: &str) -> u64 {
            s.bytes().fold(14695981039346656037u64, |h, b| {
                (h ^ u64::from(b)).wrapping_mul(1099511628211)
            })
        }
        let mut out = vec![0.0f64; dim];
        let mut bump = |feat: String, w: f64| {
            let h = fnv(&feat);
            let s = if h < (1u64 << 63) { w } else { -w };
            out[(h % dim as u64) as usize] += s;
        };
        for word in text.to_lowercase().split(|c: char| !c.is_alphanumeric()) {
            if word.is_empty() {
                continue;
            }
            bump(format!("w:{word}"), 1.0);
            let chars: Vec<char> = std::iter::once('#')
                .chain(word.chars())
                .chain(std::iter::once('#'))
                .collect();
            for i in 0..chars.len() - 2 {
                bump(
                    format!("c:{}{}{}", chars[i], chars[i + 1], chars[i + 2]),
                    0.5,
                );
            }
        }
        let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.iter().map(|x| x / n).collect()
    }

    #[test]
    fn matches_rederived_hash() {
        let e = HashEmbedder::default();
        let got = e.embed_text("nothing");
        let want = oracle("nothing", DEFAULT_HASH_DIM);
        for (a, b) in got.as_slice().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((got.norm() - 1.0).abs() < 1e-9);
        assert_eq!(got, HashEmbedder::default().embed_text("nothing"));
    }

    #[test]
    fn duplicates_and_empty_batches() {
        let e = HashEmbedder::new(64);
        let out = e.embed(&["a".to_string(), "a".to_string()]).unwrap();
        assert_eq!(out[0], out[1]);
        assert!(e.embed(&[]).unwrap().is_empty());
        assert!(e.embed(&["  ".to_string()]).is_err());
    }

    #[test]
    fn related_texts_score_higher() {
        let e = HashEmbedder::default();
        let a = e.embed_text("andy rubin");
        let b = e.embed_text("Andy Rubin founder");
        let c = e.embed_text("essential products");
        assert!(cosine_sim(&a, &b).unwrap() > cosine_sim(&a, &c).unwrap());
    }
}
