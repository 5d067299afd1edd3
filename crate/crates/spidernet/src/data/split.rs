//! Stratified train/validation/test splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.8, validation: 0.1, test: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// All records of an entity land in the same split (leakage guard).
    EntityCoherent,
    /// Records are assigned independently; mirrors protocols where one
    /// entity contributes records to several splits.
    RecordLevel,
}

/// Row indices per split; disjoint and exhaustive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split preserving the class ratio in every part (largest
/// remainder per class), deterministic per seed.
pub fn stratified_split(
    dataset: &Dataset,
    fractions: SplitFractions,
    seed: u64,
    mode: SplitMode,
) -> Result<Splits> {
    let sum = fractions.train + fractions.validation + fractions.test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::hyper("fractions", format!("must sum to 1, got {}", sum)));
    }
    if fractions.train < 0.0 || fractions.validation < 0.0 || fractions.test < 0.0 {
        return Err(Error::hyper("fractions", "must be nonnegative"));
    }
    let n_pos = dataset.labels.iter().filter(|&&l| l == 1).count();
    if n_pos < 10 {
        log::warn!("only {} positive rows; stratified split quality will be coarse", n_pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Splits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    match mode {
        SplitMode::RecordLevel => {
            for class in [0u8, 1u8] {
                let mut rows: Vec<usize> = (0..dataset.n_rows()).filter(|&r| dataset.labels[r] == class).collect();
                rows.shuffle(&mut rng);
                distribute(&rows, fractions, &mut splits, |r| vec![r]);
            }
        }
        SplitMode::EntityCoherent => {
            // group rows per entity; an entity is positive if any row is
            let mut groups: BTreeMap<&str, (u8, Vec<usize>)> = BTreeMap::new();
            for r in 0..dataset.n_rows() {
                let entry = groups.entry(dataset.entity_ids[r].as_str()).or_insert((0, Vec::new()));
                entry.0 |= dataset.labels[r];
                entry.1.push(r);
            }
            for class in [0u8, 1u8] {
                let mut entities: Vec<&str> = groups
                    .iter()
                    .filter(|(_, (label, _))| *label == class)
                    .map(|(id, _)| *id)
                    .collect();
                entities.shuffle(&mut rng);
                distribute(&entities, fractions, &mut splits, |id| groups[id].1.clone());
            }
        }
    }
    splits.train.sort_unstable();
    splits.validation.sort_unstable();
    splits.test.sort_unstable();
    Ok(splits)
}

/// Largest-remainder allocation of `items` into the three splits, then
/// expansion of each item into row indices.
fn distribute<T: Copy>(items: &[T], fractions: SplitFractions, splits: &mut Splits, expand: impl Fn(T) -> Vec<usize>) {
    let n = items.len();
    let targets = [fractions.train, fractions.validation, fractions.test].map(|f| f * n as f64);
    let mut counts = targets.map(|t| t.floor() as usize);
    let mut leftover = n - counts.iter().sum::<usize>();
    // hand remainders to the largest fractional parts; ties go in
    // train > validation > test order
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &slot in &order {
        if leftover == 0 {
            break;
        }
        counts[slot] += 1;
        leftover -= 1;
    }
    let mut cursor = 0;
    for (slot, &count) in counts.iter().enumerate() {
        let bucket = match slot {
            0 => &mut splits.train,
            1 => &mut splits.validation,
            _ => &mut splits.test,
        };
        for item in &items[cursor..cursor + count] {
            bucket.extend(expand(*item));
        }
        cursor += count;
    }
}
