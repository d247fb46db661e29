//! Popularity (logQ) corrections and same-condition hard negatives.

use rand::Rng;

use crate::condition::Condition;
use crate::dataset::{Dataset, ItemId};

/// `log((count + 1) / (total + I))` for each item in `batch_items`: the
/// add-one-smoothed probability that in-batch sampling draws the item.
pub fn logq_corrections(popularity: &[u64], batch_items: &[ItemId]) -> Vec<f64> {
    let table = logq_table(popularity);
    batch_items.iter().map(|&i| table[i as usize]).collect()
}

/// The same correction for every item, computed once per training run.
pub fn logq_table(popularity: &[u64]) -> Vec<f64> {
    let total: u64 = popularity.iter().sum();
    let denom = (total + popularity.len() as u64) as f64;
    popularity.iter().map(|&c| ((c + 1) as f64 / denom).ln()).collect()
}

/// Draws negatives that share the positive's condition.
#[derive(Debug, Clone)]
pub struct HardNegativeSampler {
    items_by_topic: Vec<Vec<ItemId>>,
    num_items: usize,
}

impl HardNegativeSampler {
    pub fn new(dataset: &Dataset) -> Self {
        Self { items_by_topic: dataset.items_by_topic(), num_items: dataset.num_items() }
    }

    /// `count` items carrying the condition's topic, uniform with replacement
    /// and never the positive. Null conditions, and topics whose only item
    /// is the positive, draw from the whole corpus instead.
    pub fn sample<R: Rng + ?Sized>(&self, positive: ItemId, condition: Condition, count: usize, rng: &mut R) -> Vec<ItemId> {
        let pool: &[ItemId] = match condition {
            Condition::Topic(t) => self.items_by_topic.get(t as usize).map_or(&[], |p| p.as_slice()),
            Condition::Null => &[],
        };
        let skip = pool.binary_search(&positive).ok();
        let eligible = pool.len() - usize::from(skip.is_some());
        (0..count)
            .map(|_| {
                if eligible > 0 {
                    let mut k = rng.random_range(0..eligible);
                    if skip.is_some_and(|s| k >= s) {
                        k += 1;
                    }
                    pool[k]
                } else {
                    self.corpus_draw(positive, rng)
                }
            })
            .collect()
    }

    fn corpus_draw<R: Rng + ?Sized>(&self, positive: ItemId, rng: &mut R) -> ItemId {
        if self.num_items <= 1 {
            return positive;
        }
        let k = rng.random_range(0..self.num_items - 1) as ItemId;
        if k >= positive {
            k + 1
        } else {
            k
        }
    }
}

/// Hard negatives for each `(positive item, condition)` row of a batch.
pub fn sample_hard_negatives<R: Rng + ?Sized>(
    batch: &[(ItemId, Condition)],
    sampler: &HardNegativeSampler,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<ItemId>> {
    batch
        .iter()
        .map(|&(item, cond)| sampler.sample(item, cond, count, rng))
        .collect()
}
