//! Condition extraction: turns an engaged item into the single topic that the
//! conditional user tower is trained on.

use rand::Rng;

use crate::dataset::{Item, Topic};

/// A topic id, or the null condition (stored as row `T` of the condition
/// embedding table).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    Topic(Topic),
    Null,
}

impl Condition {
    /// Row in a `(T + 1)`-row condition table.
    pub fn row(self, topic_count: u32) -> usize {
        match self {
            Condition::Topic(t) => t as usize,
            Condition::Null => topic_count as usize,
        }
    }

    pub fn from_row(row: usize, topic_count: u32) -> Option<Condition> {
        match row {
            r if r < topic_count as usize => Some(Condition::Topic(r as Topic)),
            r if r == topic_count as usize => Some(Condition::Null),
            _ => None,
        }
    }

    pub fn topic(self) -> Option<Topic> {
        match self {
            Condition::Topic(t) => Some(t),
            Condition::Null => None,
        }
    }
}

/// Uniform member of `item.topics`, or [`Condition::Null`] for a topic-less item.
pub fn extract_condition<R: Rng + ?Sized>(item: &Item, rng: &mut R) -> Condition {
    match item.topics.len() {
        0 => Condition::Null,
        1 => Condition::Topic(item.topics[0]),
        n => Condition::Topic(item.topics[rng.random_range(0..n)]),
    }
}

/// Per-event conditions across epochs. With `resample_per_epoch` each epoch
/// draws fresh conditions; otherwise the first epoch's draws are reused.
#[derive(Debug, Clone)]
pub struct ConditionSampler {
    resample_per_epoch: bool,
    cached: Option<Vec<Condition>>,
}

impl ConditionSampler {
    pub fn new(resample_per_epoch: bool) -> Self {
        Self { resample_per_epoch, cached: None }
    }

    /// Conditions for `event_items` (item per train event), in event order.
    pub fn conditions<R: Rng + ?Sized>(&mut self, items: &[Item], event_items: &[u32], rng: &mut R) -> &[Condition] {
        if self.resample_per_epoch || self.cached.is_none() {
            let fresh = event_items
                .iter()
                .map(|&i| extract_condition(&items[i as usize], rng))
                .collect();
            self.cached = Some(fresh);
        }
        self.cached.as_deref().unwrap_or_default()
    }
}
