//! Fraud-rate-leveled batch construction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One epoch of batches over `labels`.
///
/// With `target_fraud_rate = 0` this is plain shuffled batching covering
/// every record exactly once. Otherwise every batch receives at least
/// `ceil(rate * batch_size)` positives: negatives are drawn without
/// replacement (each exactly once per epoch) while the positive stream is
/// reshuffled and reused whenever it runs dry.
pub fn leveled_batches(labels: &[u8], batch_size: usize, target_fraud_rate: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(Error::hyper("batch_size", "must be >= 1"));
    }
    if !(0.0..1.0).contains(&target_fraud_rate) {
        return Err(Error::hyper("target_fraud_rate", "must be in [0, 1)"));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no records to batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if target_fraud_rate == 0.0 {
        let mut indices: Vec<usize> = (0..labels.len()).collect();
        indices.shuffle(&mut rng);
        return Ok(indices.chunks(batch_size).map(|c| c.to_vec()).collect());
    }

    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if positives.is_empty() {
        return Err(Error::InvalidInput(
            "target_fraud_rate > 0 requires at least one positive record".into(),
        ));
    }
    let need_pos = (target_fraud_rate * batch_size as f64).ceil() as usize;
    let need_pos = need_pos.max(1).min(batch_size);
    if need_pos >= batch_size && !negatives.is_empty() {
        return Err(Error::hyper(
            "target_fraud_rate",
            "leaves no room for negatives at this batch size",
        ));
    }
    let neg_per_batch = batch_size - need_pos;

    let mut shuffled_neg = negatives;
    shuffled_neg.shuffle(&mut rng);
    let mut pos_queue: Vec<usize> = Vec::new();

    let mut batches = Vec::new();
    let neg_chunks: Vec<&[usize]> = if shuffled_neg.is_empty() {
        vec![&[]]
    } else {
        shuffled_neg.chunks(neg_per_batch.max(1)).collect()
    };
    for chunk in neg_chunks {
        let mut batch: Vec<usize> = chunk.to_vec();
        for _ in 0..need_pos {
            if pos_queue.is_empty() {
                pos_queue = positives.clone();
                pos_queue.shuffle(&mut rng);
            }
            batch.push(pos_queue.pop().expect("refilled above"));
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, positives: usize) -> Vec<u8> {
        (0..n).map(|i| (i < positives) as u8).collect()
    }

    #[test]
    fn every_batch_meets_the_positive_quota() {
        let labels = labels(1000, 10);
        for seed in 0..10 {
            let batches = leveled_batches(&labels, 100, 0.1, seed).unwrap();
            for batch in &batches {
                let pos = batch.iter().filter(|&&i| labels[i] == 1).count();
                assert!(pos >= 10, "seed {} batch has {} positives", seed, pos);
            }
        }
    }

    #[test]
    fn negatives_each_appear_exactly_once_per_epoch() {
        let labels = labels(1000, 10);
        let batches = leveled_batches(&labels, 100, 0.1, 3).unwrap();
        let mut seen_neg: Vec<usize> = batches
            .iter()
            .flatten()
            .copied()
            .filter(|&i| labels[i] == 0)
            .collect();
        seen_neg.sort_unstable();
        assert_eq!(seen_neg, (10..1000).collect::<Vec<_>>());
    }

    #[test]
    fn rate_zero_is_plain_shuffled_batching() {
        let labels = labels(250, 25);
        let batches = leveled_batches(&labels, 64, 0.0, 7).unwrap();
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        assert_eq!(all.len(), 250);
        all.sort_unstable();
        assert_eq!(all, (0..250).collect::<Vec<_>>());
    }

    #[test]
    fn single_positive_is_recycled_with_replacement() {
        let labels = labels(9, 1);
        let batches = leveled_batches(&labels, 2, 0.5, 11).unwrap();
        for batch in &batches {
            assert!(batch.contains(&0), "batch {:?} misses the lone positive", batch);
        }
        assert!(batches.len() > 1);
    }

    #[test]
    fn positive_rate_without_positives_is_an_error() {
        let labels = labels(20, 0);
        assert!(leveled_batches(&labels, 4, 0.25, 0).is_err());
    }

    #[test]
    fn batches_are_deterministic_per_seed() {
        let labels = labels(300, 30);
        let a = leveled_batches(&labels, 50, 0.2, 21).unwrap();
        let b = leveled_batches(&labels, 50, 0.2, 21).unwrap();
        assert_eq!(a, b);
        let c = leveled_batches(&labels, 50, 0.2, 22).unwrap();
        assert_ne!(a, c);
    }
}
