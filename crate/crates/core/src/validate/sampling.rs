use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Keeps each record of the unique most frequent label with probability
/// `majority_rate`; other labels are kept whole. Ties mean no majority.
pub fn class_balance<T, F>(records: Vec<T>, label: F, majority_rate: f64, seed: u64) -> Vec<T>
where
    F: Fn(&T) -> String,
{
    if majority_rate >= 1.0 {
        return records;
    }
    let labels: Vec<String> = records.iter().map(&label).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &labels {
        *counts.entry(l).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let mut leaders = counts.iter().filter(|(_, &c)| c == top);
    let majority = match (leaders.next(), leaders.next()) {
        (Some((l, _)), None) => l.to_string(),
        _ => return records,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .into_iter()
        .zip(labels)
        .filter(|(_, l)| *l != majority || rng.random::<f64>() < majority_rate)
        .map(|(r, _)| r)
        .collect()
}

/// Seeded subset of `ceil(fraction * n)` records in original order.
pub fn audit_sample<T: Clone>(corpus: &[T], fraction: f64, seed: u64) -> Vec<T> {
    let n = corpus.len();
    let want = ((fraction.clamp(0.0, 1.0) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, want.min(n)).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| corpus[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(yes: usize, no: usize) -> Vec<String> {
        std::iter::repeat_n("yes".to_string(), yes).chain(std::iter::repeat_n("no".to_string(), no)).collect()
    }

    #[test]
    fn majority_downsampled_reproducibly() {
        let kept = class_balance(labels(300, 100), Clone::clone, 1.0 / 3.0, 7);
        let yes = kept.iter().filter(|l| *l == "yes").count();
        assert!((80..=120).contains(&yes), "{yes}");
        assert_eq!(kept.len() - yes, 100);
        assert_eq!(kept, class_balance(labels(300, 100), Clone::clone, 1.0 / 3.0, 7));
    }

    #[test]
    fn balanced_or_full_rate_is_identity() {
        assert_eq!(class_balance(labels(5, 5), Clone::clone, 0.1, 1), labels(5, 5));
        assert_eq!(class_balance(labels(9, 1), Clone::clone, 1.0, 1), labels(9, 1));
    }

    #[test]
    fn audit_sizes() {
        let corpus: Vec<usize> = (0..100).collect();
        assert_eq!(audit_sample(&corpus, 0.10, 3).len(), 10);
        assert_eq!(audit_sample(&corpus, 0.10, 3), audit_sample(&corpus, 0.10, 3));
        assert_eq!(audit_sample(&[1], 0.10, 3), [1]);
        assert!(audit_sample::<u8>(&[], 0.1, 3).is_empty());
        let big: Vec<usize> = (0..1000).collect();
        assert_ne!(audit_sample(&big, 0.1, 1), audit_sample(&big, 0.1, 2));
    }
}
