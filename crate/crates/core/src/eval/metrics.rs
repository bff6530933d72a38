use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

/// SQuAD-style answer normalization: lowercase, drop ASCII punctuation,
/// drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

/// Token-bag F1 between normalized answers.
pub fn f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.len() == gt.len() { 1.0 } else { 0.0 };
    }
    let mut bag: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *bag.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &pt {
        if let Some(c) = bag.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pt.len() as f64;
    let recall = overlap as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Share of `gold` found among the first `k` ranked ids.
pub fn recall_at_k<S: AsRef<str>>(ranked: &[S], gold: &BTreeSet<String>, k: usize) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::Precondition(
            "recall needs a non-empty gold set".into(),
        ));
    }
    if k == 0 {
        return Err(Error::Precondition(
            "recall cutoff k must be at least 1".into(),
        ));
    }
    let top: BTreeSet<&str> = ranked.iter().take(k).map(AsRef::as_ref).collect();
    let hits = gold.iter().filter(|g| top.contains(g.as_str())).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gold(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(exact_match("Nothing", "nothing"), 1.0);
        assert_eq!(exact_match("the Nothing", "Nothing"), 1.0);
        assert_eq!(exact_match("Essential", "Nothing"), 0.0);
        assert_eq!(f1("phone brand", "phone"), 2.0 / 3.0);
        assert_eq!(f1("a b", "c d"), 0.0);
        assert_eq!(f1("Nothing.", "nothing"), 1.0);
        assert_eq!(
            recall_at_k(&["A", "C"], &gold(&["A", "B"]), 2).unwrap(),
            0.5
        );
        assert_eq!(
            recall_at_k(&["B", "A", "C"], &gold(&["A", "B"]), 2).unwrap(),
            1.0
        );
        assert!(recall_at_k(&["A"], &gold(&[]), 2).is_err());
        assert!(recall_at_k(&["A"], &gold(&["A"]), 0).is_err());
    }

    proptest! {
        #[test]
        fn recall_is_monotone_in_k(ranked in proptest::collection::vec(0u8..20, 0..30), g in proptest::collection::btree_set(0u8..20, 1..6)) {
            let ranked: Vec<String> = ranked.iter().map(|x| x.to_string()).collect();
            let gold: BTreeSet<String> = g.iter().map(|x| x.to_string()).collect();
            let mut prev = 0.0;
            for k in 1..=32 {
                let r = recall_at_k(&ranked, &gold, k).unwrap();
                prop_assert!(r >= prev && (0.0..=1.0).contains(&r));
                prev = r;
            }
        }

        #[test]
        fn em_implies_full_f1(a in "[a-zA-Z ,.]{0,20}", b in "[a-zA-Z ,.]{0,20}") {
            if exact_match(&a, &b) == 1.0 {
                prop_assert_eq!(f1(&a, &b), 1.0);
            }
            let v = f1(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(f1(&a, &a), 1.0);
        }
    }
}
