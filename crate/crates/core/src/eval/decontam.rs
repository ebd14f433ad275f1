use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::normalize::tokens;

/// Default n-gram length for train/test overlap checks.
pub const DEFAULT_NGRAM: usize = 8;

/// A train text sharing at least one n-gram with a test text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Overlap {
    pub train_id: String,
    pub test_id: String,
    /// First shared n-gram in train-text order, space-joined.
    pub ngram: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecontamReport {
    pub n: usize,
    pub train_texts: usize,
    pub test_texts: usize,
    pub overlaps: Vec<Overlap>,
}

impl DecontamReport {
    pub fn is_clean(&self) -> bool {
        self.overlaps.is_empty()
    }

    /// Distinct train ids that must be dropped.
    pub fn contaminated_train_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.overlaps.iter().map(|o| o.train_id.as_str()).collect();
        ids.dedup();
        ids
    }
}

/// One entry per (train, test) pair that shares an n-gram. Stopwords are
/// kept here; they carry phrase identity. `n` of 0 is treated as 1.
pub fn decontaminate(train: &[(String, String)], test: &[(String, String)], n: usize) -> DecontamReport {
    let n = n.max(1);
    let mut index: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
    for (j, (_, text)) in test.iter().enumerate() {
        let toks = tokens(text);
        for gram in toks.windows(n) {
            let slot = index.entry(gram.to_vec()).or_default();
            if slot.last() != Some(&j) {
                slot.push(j);
            }
        }
    }

    let mut overlaps = Vec::new();
    for (train_id, text) in train {
        let toks = tokens(text);
        let mut seen: HashSet<usize> = HashSet::new();
        let mut found: Vec<(usize, String)> = Vec::new();
        for gram in toks.windows(n) {
            if let Some(tests) = index.get(gram) {
                for &j in tests {
                    if seen.insert(j) {
                        found.push((j, gram.join(" ")));
                    }
                }
            }
        }
        found.sort_by_key(|(j, _)| *j);
        overlaps.extend(found.into_iter().map(|(j, ngram)| Overlap {
            train_id: train_id.clone(),
            test_id: test[j].0.clone(),
            ngram,
        }));
    }
    DecontamReport { n, train_texts: train.len(), test_texts: test.len(), overlaps }
}
