//! Top-K ranking metrics with the truncation conventions used throughout:
//! recall against `min(|relevant|, K)` and binary-relevance NDCG.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

fn check_args<T: Ord>(relevant: &BTreeSet<T>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Contract("metrics need k >= 1".into()));
    }
    if relevant.is_empty() {
        return Err(Error::Contract(
            "metrics are undefined for an empty relevant set".into(),
        ));
    }
    Ok(())
}

/// Fraction of the relevant items found in the top `k` of `ranked`, with the
/// denominator capped at `k` so short relevant lists and short candidate
/// lists are both scored sensibly.
pub fn recall_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> Result<f64> {
    check_args(relevant, k)?;
    let hits = ranked
        .iter()
        .take(k)
        .filter(|item| relevant.contains(item))
        .count();
    Ok(hits as f64 / relevant.len().min(k) as f64)
}

/// Discounted cumulative gain of the top `k`, binary relevance: position `i`
/// (1-based) contributes `1 / log2(i + 1)` when relevant.
pub fn dcg_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of the best possible ranking: `relevant_count` items packed into the
/// top positions, truncated at `k`.
pub fn ideal_dcg(relevant_count: usize, k: usize) -> f64 {
    (0..relevant_count.min(k))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// Normalised DCG at `k`: [`dcg_at_k`] over [`ideal_dcg`].
pub fn ndcg_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> Result<f64> {
    check_args(relevant, k)?;
    Ok(dcg_at_k(ranked, relevant, k) / ideal_dcg(relevant.len(), k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(items: &[u32]) -> BTreeSet<u32> {
        items.iter().copied().collect()
    }

    #[test]
    fn recall_worked_cases() {
        // Top-2 of three candidates holds one of two relevant items.
        assert_eq!(recall_at_k(&[1, 2, 3], &set(&[1, 3]), 2).unwrap(), 0.5);
        // Perfect ranking.
        assert_eq!(recall_at_k(&[1, 3, 2], &set(&[1, 3]), 2).unwrap(), 1.0);
        // k exceeding the candidate list uses min(|relevant|, k).
        assert_eq!(recall_at_k(&[1, 2, 3], &set(&[1, 3]), 10).unwrap(), 1.0);
        // More relevant items than k: denominator is k.
        assert_eq!(recall_at_k(&[1, 2, 3], &set(&[1, 2, 3]), 2).unwrap(), 1.0);
    }

    #[test]
    fn recall_contract_errors() {
        assert!(recall_at_k(&[1], &BTreeSet::new(), 2).is_err());
        assert!(recall_at_k(&[1], &set(&[1]), 0).is_err());
    }

    #[test]
    fn ndcg_worked_cases() {
        // Relevance pattern [1, 0, 1] with two relevant items:
        // DCG = 1 + 1/log2(4) = 1.5, IDCG = 1 + 1/log2(3).
        let got = ndcg_at_k(&[1, 2, 3], &set(&[1, 3]), 3).unwrap();
        let want = 1.5 / (1.0 + 1.0 / 3.0f64.log2());
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.9197).abs() < 1e-4);

        assert_eq!(ndcg_at_k(&[1, 3, 2], &set(&[1, 3]), 3).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[2, 4, 5], &set(&[1]), 3).unwrap(), 0.0);
    }

    #[test]
    fn ndcg_is_one_exactly_when_relevant_fill_the_top() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let n = rng.gen_range(1..12usize);
            let ranked: Vec<u32> = (0..n as u32).collect();
            let rel_count = rng.gen_range(1..=n);
            let k = rng.gen_range(1..8usize);
            // Draw a random relevant subset.
            let mut relevant = BTreeSet::new();
            while relevant.len() < rel_count {
                relevant.insert(rng.gen_range(0..n as u32));
            }
            let ndcg = ndcg_at_k(&ranked, &relevant, k).unwrap();
            let top_filled = ranked
                .iter()
                .take(rel_count.min(k))
                .all(|i| relevant.contains(i));
            if top_filled {
                assert!((ndcg - 1.0).abs() < 1e-12);
            } else {
                assert!(ndcg < 1.0);
            }
        }
    }

    #[test]
    fn metrics_match_brute_force_on_random_instances() {
        // Independent oracle: direct transcription of the defining sums,
        // computed without the library helpers.
        fn oracle(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> (f64, f64) {
            let mut hits = 0usize;
            let mut dcg = 0.0;
            for (pos, item) in ranked.iter().enumerate() {
                if pos >= k {
                    break;
                }
                if relevant.contains(item) {
                    hits += 1;
                    dcg += 1.0 / ((pos as f64) + 2.0).log2();
                }
            }
            let denom = if relevant.len() < k { relevant.len() } else { k };
            let mut idcg = 0.0;
            let ideal_hits = if relevant.len() < k { relevant.len() } else { k };
            for pos in 0..ideal_hits {
                idcg += 1.0 / ((pos as f64) + 2.0).log2();
            }
            (hits as f64 / denom as f64, dcg / idcg)
        }

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.gen_range(1..40usize);
            let mut ranked: Vec<u32> = (0..n as u32).collect();
            // Random permutation as the "ranking".
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                ranked.swap(i, j);
            }
            let rel_count = rng.gen_range(1..=n);
            let mut relevant = BTreeSet::new();
            while relevant.len() < rel_count {
                relevant.insert(rng.gen_range(0..n as u32));
            }
            let k = rng.gen_range(1..20usize);

            let (want_recall, want_ndcg) = oracle(&ranked, &relevant, k);
            let recall = recall_at_k(&ranked, &relevant, k).unwrap();
            let ndcg = ndcg_at_k(&ranked, &relevant, k).unwrap();
            assert_eq!(recall, want_recall);
            assert!((ndcg - want_ndcg).abs() < 1e-12);
        }
    }
}
