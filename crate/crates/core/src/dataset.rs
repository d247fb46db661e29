//! Synthetic user/item/topic engagement data and its text file format.
//!
//! File layout (UTF-8, tab-separated, one record per line):
//!
//! ```text
//! #meta    topic_count=T
//! #users
//! id    feature_id    affinity(comma-separated, may be empty)
//! #items
//! id    feature_id    topic,topic,...
//! #engagements
//! user_id    item_id    train|heldout
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fileio;
use crate::rng::{self, stream};

pub type Topic = u32;
pub type UserId = u32;
pub type ItemId = u32;

/// Retries when a sampled topic has no items before giving up.
const TOPIC_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub id: UserId,
    pub feature_id: u32,
    /// Ground-truth topic distribution; only synthetic datasets carry it.
    pub affinity: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: ItemId,
    pub feature_id: u32,
    /// Sorted, deduplicated.
    pub topics: Vec<Topic>,
}

impl Item {
    pub fn has_topic(&self, topic: Topic) -> bool {
        self.topics.binary_search(&topic).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Engagement {
    pub user: UserId,
    pub item: ItemId,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub topic_count: u32,
    pub users: Vec<User>,
    pub items: Vec<Item>,
    pub engagements: Vec<Engagement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub num_users: u32,
    pub num_items: u32,
    pub num_topics: u32,
    pub topics_per_item_range: [u32; 2],
    pub events_per_user: u32,
    pub affinity_concentration: f64,
    pub noise_rate: f64,
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_users: 2_000,
            num_items: 10_000,
            num_topics: 25,
            topics_per_item_range: [1, 3],
            events_per_user: 30,
            affinity_concentration: 0.1,
            noise_rate: 0.05,
            heldout_fraction: 0.2,
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 || self.num_topics == 0 {
            return Err(Error::config(
                "num_users, num_items and num_topics must be positive",
            ));
        }
        let [lo, hi] = self.topics_per_item_range;
        if lo > hi || hi > self.num_topics {
            return Err(Error::config(format!(
                "topics_per_item_range [{lo}, {hi}] must satisfy min <= max <= num_topics ({})",
                self.num_topics
            )));
        }
        if !(self.affinity_concentration > 0.0 && self.affinity_concentration.is_finite()) {
            return Err(Error::config("affinity_concentration must be a positive real"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::config("noise_rate must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::config("heldout_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Generates a dataset. Deterministic in `config.seed`.
pub fn generate_synthetic(config: &GenConfig) -> Result<Dataset> {
    generate_synthetic_traced(config).map(|(d, _)| d)
}

/// Like [`generate_synthetic`], also returning the topic that was sampled to
/// produce each engagement (same order as `engagements`).
pub fn generate_synthetic_traced(config: &GenConfig) -> Result<(Dataset, Vec<Topic>)> {
    config.validate()?;
    let t = config.num_topics as usize;

    let mut item_rng = rng::seeded(config.seed, stream::ITEMS);
    let [lo, hi] = config.topics_per_item_range;
    let mut items = Vec::with_capacity(config.num_items as usize);
    let mut items_by_topic: Vec<Vec<ItemId>> = vec![Vec::new(); t];
    for id in 0..config.num_items {
        let size = item_rng.random_range(lo..=hi) as usize;
        let mut topics: Vec<Topic> = index::sample(&mut item_rng, t, size)
            .into_iter()
            .map(|x| x as Topic)
            .collect();
        topics.sort_unstable();
        for &tp in &topics {
            items_by_topic[tp as usize].push(id);
        }
        items.push(Item { id, feature_id: id, topics });
    }

    let gamma = Gamma::new(config.affinity_concentration, 1.0)
        .map_err(|e| Error::config(format!("affinity_concentration: {e}")))?;
    let mut user_rng = rng::seeded(config.seed, stream::USERS);
    let mut users = Vec::with_capacity(config.num_users as usize);
    for id in 0..config.num_users {
        let mut a: Vec<f64> = (0..t).map(|_| gamma.sample(&mut user_rng)).collect();
        let sum: f64 = a.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            a.iter_mut().for_each(|x| *x /= sum);
        } else {
            // every gamma draw underflowed: fall back to a one-hot affinity
            let hot = user_rng.random_range(0..t);
            a = (0..t).map(|k| if k == hot { 1.0 } else { 0.0 }).collect();
        }
        users.push(User { id, feature_id: id, affinity: Some(a) });
    }

    let mut event_rng = rng::seeded(config.seed, stream::EVENTS);
    let mut split_rng = rng::seeded(config.seed, stream::SPLIT);
    let mut engagements = Vec::with_capacity((config.num_users * config.events_per_user) as usize);
    let mut trace = Vec::with_capacity(engagements.capacity());
    for user in &users {
        let affinity = user.affinity.as_deref().unwrap_or_default();
        let start = engagements.len();
        for _ in 0..config.events_per_user {
            let mut attempt = 0;
            let topic = loop {
                let tp = if event_rng.random::<f64>() < config.noise_rate {
                    event_rng.random_range(0..t)
                } else {
                    sample_categorical(affinity, &mut event_rng)
                };
                if !items_by_topic[tp].is_empty() {
                    break tp;
                }
                attempt += 1;
                if attempt >= TOPIC_RETRIES {
                    return Err(Error::config(format!(
                        "user {}: no item carries any of {TOPIC_RETRIES} sampled topics",
                        user.id
                    )));
                }
            };
            let pool = &items_by_topic[topic];
            let item = pool[event_rng.random_range(0..pool.len())];
            engagements.push(Engagement { user: user.id, item, split: Split::Train });
            trace.push(topic as Topic);
        }

        // Split at (user, item) granularity so no pair straddles both splits.
        let mut distinct: Vec<ItemId> = Vec::new();
        let mut seen = HashSet::new();
        for e in &engagements[start..] {
            if seen.insert(e.item) {
                distinct.push(e.item);
            }
        }
        distinct.shuffle(&mut split_rng);
        let n_heldout = (config.heldout_fraction * distinct.len() as f64).round() as usize;
        let heldout: HashSet<ItemId> = distinct[..n_heldout].iter().copied().collect();
        for e in &mut engagements[start..] {
            if heldout.contains(&e.item) {
                e.split = Split::Heldout;
            }
        }
    }

    let dataset = Dataset { topic_count: config.num_topics, users, items, engagements };
    Ok((dataset, trace))
}

fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // rounding left a sliver above the cumulative sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn train_events(&self) -> Vec<(UserId, ItemId)> {
        self.events_in(Split::Train)
    }

    pub fn heldout_events(&self) -> Vec<(UserId, ItemId)> {
        self.events_in(Split::Heldout)
    }

    fn events_in(&self, split: Split) -> Vec<(UserId, ItemId)> {
        self.engagements
            .iter()
            .filter(|e| e.split == split)
            .map(|e| (e.user, e.item))
            .collect()
    }

    /// Items carrying each topic, ascending by id.
    pub fn items_by_topic(&self) -> Vec<Vec<ItemId>> {
        let mut out = vec![Vec::new(); self.topic_count as usize];
        for item in &self.items {
            for &t in &item.topics {
                out[t as usize].push(item.id);
            }
        }
        out
    }

    /// Checks every structural invariant the file format relies on.
    pub fn validate(&self) -> Result<()> {
        for (i, u) in self.users.iter().enumerate() {
            if u.id as usize != i {
                return Err(Error::Referential(format!("user at position {i} has id {}", u.id)));
            }
            if u.feature_id as usize >= self.users.len() {
                return Err(Error::Referential(format!(
                    "user {} feature_id {} outside vocabulary of {}",
                    u.id,
                    u.feature_id,
                    self.users.len()
                )));
            }
            if let Some(a) = &u.affinity {
                if a.len() != self.topic_count as usize {
                    return Err(Error::Referential(format!(
                        "user {} affinity has {} entries, expected {}",
                        u.id,
                        a.len(),
                        self.topic_count
                    )));
                }
            }
        }
        for (i, item) in self.items.iter().enumerate() {
            if item.id as usize != i {
                return Err(Error::Referential(format!("item at position {i} has id {}", item.id)));
            }
            if item.feature_id as usize >= self.items.len() {
                return Err(Error::Referential(format!(
                    "item {} feature_id {} outside vocabulary of {}",
                    item.id,
                    item.feature_id,
                    self.items.len()
                )));
            }
            if let Some(&t) = item.topics.iter().find(|&&t| t >= self.topic_count) {
                return Err(Error::Referential(format!(
                    "item {} references topic {t}, vocabulary has {}",
                    item.id, self.topic_count
                )));
            }
            if item.topics.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Referential(format!(
                    "item {} topic list is not a sorted set",
                    item.id
                )));
            }
        }
        let mut train_pairs = HashSet::new();
        let mut heldout_pairs = HashSet::new();
        for e in &self.engagements {
            if e.user as usize >= self.users.len() {
                return Err(Error::Referential(format!("engagement references absent user {}", e.user)));
            }
            if e.item as usize >= self.items.len() {
                return Err(Error::Referential(format!("engagement references absent item {}", e.item)));
            }
            match e.split {
                Split::Train => train_pairs.insert((e.user, e.item)),
                Split::Heldout => heldout_pairs.insert((e.user, e.item)),
            };
        }
        if let Some((u, i)) = train_pairs.intersection(&heldout_pairs).next() {
            return Err(Error::Referential(format!(
                "pair (user {u}, item {i}) appears in both train and heldout"
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "#meta\ttopic_count={}", self.topic_count);
        out.push_str("#users\n");
        for u in &self.users {
            let affinity = u
                .affinity
                .as_ref()
                .map(|a| join(a.iter().map(|x| format!("{x:?}"))))
                .unwrap_or_default();
            let _ = writeln!(out, "{}\t{}\t{}", u.id, u.feature_id, affinity);
        }
        out.push_str("#items\n");
        for item in &self.items {
            let topics = join(item.topics.iter().map(|t| t.to_string()));
            let _ = writeln!(out, "{}\t{}\t{}", item.id, item.feature_id, topics);
        }
        out.push_str("#engagements\n");
        for e in &self.engagements {
            let _ = writeln!(out, "{}\t{}\t{}", e.user, e.item, e.split.as_str());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Dataset> {
        #[derive(PartialEq, Clone, Copy)]
        enum Section {
            Start,
            Users,
            Items,
            Engagements,
        }
        let mut section = Section::Start;
        let mut topic_count: Option<u32> = None;
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut engagements = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let perr = |message: String| Error::Parse { line: line_no, message };
            if raw.is_empty() {
                continue;
            }
            if let Some(header) = raw.strip_prefix('#') {
                let mut parts = header.split('\t');
                match parts.next().unwrap_or_default() {
                    "meta" => {
                        for kv in parts {
                            let (k, v) = kv
                                .split_once('=')
                                .ok_or_else(|| perr(format!("meta field `{kv}` is not key=value")))?;
                            match k {
                                "topic_count" => {
                                    topic_count = Some(
                                        v.parse().map_err(|_| perr(format!("bad topic_count `{v}`")))?,
                                    )
                                }
                                _ => return Err(perr(format!("unknown meta key `{k}`"))),
                            }
                        }
                    }
                    "users" => section = Section::Users,
                    "items" => section = Section::Items,
                    "engagements" => section = Section::Engagements,
                    other => return Err(perr(format!("unknown section `#{other}`"))),
                }
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 3 {
                return Err(perr(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let int = |s: &str, what: &str| -> Result<u32> {
                s.parse::<u32>()
                    .map_err(|_| Error::Parse { line: line_no, message: format!("bad {what} `{s}`") })
            };
            match section {
                Section::Start => return Err(perr("record before any section header".into())),
                Section::Users => {
                    let id = int(fields[0], "user id")?;
                    if id as usize != users.len() {
                        return Err(perr(format!("user ids must be dense and ascending, got {id}")));
                    }
                    let affinity = if fields[2].is_empty() {
                        None
                    } else {
                        Some(
                            fields[2]
                                .split(',')
                                .map(|s| s.parse::<f64>().map_err(|_| perr(format!("bad affinity `{s}`"))))
                                .collect::<Result<Vec<_>>>()?,
                        )
                    };
                    users.push(User { id, feature_id: int(fields[1], "feature id")?, affinity });
                }
                Section::Items => {
                    let id = int(fields[0], "item id")?;
                    if id as usize != items.len() {
                        return Err(perr(format!("item ids must be dense and ascending, got {id}")));
                    }
                    let topics = if fields[2].is_empty() {
                        Vec::new()
                    } else {
                        fields[2].split(',').map(|s| int(s, "topic")).collect::<Result<Vec<_>>>()?
                    };
                    items.push(Item { id, feature_id: int(fields[1], "feature id")?, topics });
                }
                Section::Engagements => {
                    let split = match fields[2] {
                        "train" => Split::Train,
                        "heldout" => Split::Heldout,
                        s => return Err(perr(format!("bad split `{s}`"))),
                    };
                    engagements.push(Engagement {
                        user: int(fields[0], "user id")?,
                        item: int(fields[1], "item id")?,
                        split,
                    });
                }
            }
        }
        let topic_count = topic_count.ok_or_else(|| Error::Format("missing #meta topic_count".into()))?;
        let dataset = Dataset { topic_count, users, items, engagements };
        dataset.validate()?;
        Ok(dataset)
    }
}

fn join(parts: impl Iterator<Item = String>) -> String {
    parts.collect::<Vec<_>>().join(",")
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    fileio::write_atomic(path, dataset.to_text().as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fileio::read_all(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format(format!("not UTF-8: {e}")))?;
    Dataset::from_text(&text)
}

/// Train-split engagement count per item, indexed by item id.
pub fn item_popularity(dataset: &Dataset) -> Vec<u64> {
    let mut counts = vec![0u64; dataset.items.len()];
    for e in dataset.engagements.iter().filter(|e| e.split == Split::Train) {
        counts[e.item as usize] += 1;
    }
    counts
}

/// One epoch of batches as indices into `dataset.train_events()`. The
/// trailing short batch is dropped.
pub fn make_batch_indices(num_events: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    if batch_size > num_events {
        return Err(Error::config(format!(
            "batch_size {batch_size} exceeds the {num_events} train events"
        )));
    }
    let mut order: Vec<usize> = (0..num_events).collect();
    order.shuffle(&mut rng::seeded(seed, stream::BATCHES));
    Ok(order
        .chunks_exact(batch_size)
        .map(|c| c.to_vec())
        .collect())
}

pub fn make_batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<Vec<(UserId, ItemId)>>> {
    let events = dataset.train_events();
    let batches = make_batch_indices(events.len(), batch_size, seed)?;
    Ok(batches
        .into_iter()
        .map(|b| b.into_iter().map(|i| events[i]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            num_users: 30,
            num_items: 80,
            num_topics: 6,
            topics_per_item_range: [0, 3],
            events_per_user: 12,
            seed: 7,
            ..GenConfig::default()
        }
    }

    fn toy(engagements: &[(u32, u32)]) -> Dataset {
        Dataset {
            topic_count: 2,
            users: (0..3).map(|id| User { id, feature_id: id, affinity: None }).collect(),
            items: (0..3).map(|id| Item { id, feature_id: id, topics: vec![id % 2] }).collect(),
            engagements: engagements
                .iter()
                .map(|&(user, item)| Engagement { user, item, split: Split::Train })
                .collect(),
        }
    }

    #[test]
    fn zero_events_gives_empty_log() {
        let d = generate_synthetic(&GenConfig { events_per_user: 0, ..small() }).unwrap();
        assert!(d.engagements.is_empty());
        assert_eq!(d.users.len(), 30);
    }

    #[test]
    fn zero_topics_is_invalid() {
        let err = generate_synthetic(&GenConfig { num_topics: 0, topics_per_item_range: [0, 0], ..small() });
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn bad_topic_range_is_invalid() {
        assert!(GenConfig { topics_per_item_range: [3, 2], ..small() }.validate().is_err());
        assert!(GenConfig { topics_per_item_range: [1, 7], ..small() }.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&small()).unwrap().to_text();
        let b = generate_synthetic(&small()).unwrap().to_text();
        assert_eq!(a.as_bytes(), b.as_bytes());
        let c = generate_synthetic(&GenConfig { seed: 8, ..small() }).unwrap().to_text();
        assert_ne!(a, c);
    }

    #[test]
    fn unreachable_topics_exhaust_retries() {
        // no item carries a topic, so every sample misses
        let cfg = GenConfig { topics_per_item_range: [0, 0], ..small() };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn generated_dataset_satisfies_invariants() {
        let d = generate_synthetic(&small()).unwrap();
        d.validate().unwrap();
        for u in &d.users {
            let a = u.affinity.as_ref().unwrap();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(a.iter().all(|&x| x >= 0.0));
        }
        for item in &d.items {
            assert!(item.topics.len() <= 3);
        }
        let heldout = d.engagements.iter().filter(|e| e.split == Split::Heldout).count();
        let frac = heldout as f64 / d.engagements.len() as f64;
        assert!((0.05..0.4).contains(&frac), "heldout fraction {frac}");
    }

    #[test]
    fn one_hot_users_only_engage_their_topic() {
        let cfg = GenConfig {
            affinity_concentration: 1e-3,
            noise_rate: 0.0,
            topics_per_item_range: [1, 2],
            ..small()
        };
        let d = generate_synthetic(&cfg).unwrap();
        for e in &d.engagements {
            let a = d.users[e.user as usize].affinity.as_ref().unwrap();
            let top = a
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .map(|(k, _)| k as Topic)
                .unwrap();
            if a[top as usize] > 0.999 {
                assert!(d.items[e.item as usize].has_topic(top));
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let d = generate_synthetic(&small()).unwrap();
        let back = Dataset::from_text(&d.to_text()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn absent_item_reference_is_rejected() {
        let text = "#meta\ttopic_count=2\n#users\n0\t0\t\n#items\n0\t0\t1\n#engagements\n0\t5\ttrain\n";
        assert!(matches!(Dataset::from_text(text), Err(Error::Referential(_))));
    }

    #[test]
    fn empty_items_with_engagements_is_rejected() {
        let text = "#meta\ttopic_count=2\n#users\n0\t0\t\n#items\n#engagements\n0\t0\theldout\n";
        assert!(matches!(Dataset::from_text(text), Err(Error::Referential(_))));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = "#meta\ttopic_count=2\n#users\n0\t0\t\n#items\n0\tzero\t1\n";
        match Dataset::from_text(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_topic_field_round_trips() {
        let text = "#meta\ttopic_count=2\n#users\n0\t0\t\n#items\n0\t0\t\n1\t1\t0,1\n#engagements\n0\t1\ttrain\n";
        let d = Dataset::from_text(text).unwrap();
        assert!(d.items[0].topics.is_empty());
        assert_eq!(d.to_text(), text);
    }

    #[test]
    fn popularity_counts() {
        let d = toy(&[(1, 1), (2, 1), (1, 2)]);
        assert_eq!(item_popularity(&d), vec![0, 2, 1]);
        assert_eq!(item_popularity(&toy(&[])), vec![0, 0, 0]);
    }

    #[test]
    fn popularity_ignores_heldout() {
        let mut d = toy(&[(0, 0), (1, 0)]);
        d.engagements[1].split = Split::Heldout;
        assert_eq!(item_popularity(&d), vec![1, 0, 0]);
    }

    #[test]
    fn popularity_conserves_train_events() {
        let d = generate_synthetic(&small()).unwrap();
        let total: u64 = item_popularity(&d).iter().sum();
        assert_eq!(total as usize, d.train_events().len());
    }

    #[test]
    fn batches_drop_remainder() {
        let b = make_batch_indices(10, 3, 1).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|x| x.len() == 3));
        assert_eq!(b, make_batch_indices(10, 3, 1).unwrap());
        assert!(matches!(make_batch_indices(10, 11, 1), Err(Error::InvalidConfig(_))));
        assert!(make_batch_indices(10, 0, 1).is_err());
    }

    #[test]
    fn batches_cover_train_minus_remainder() {
        let d = generate_synthetic(&small()).unwrap();
        let events = d.train_events();
        let bs = 7;
        let batches = make_batches(&d, bs, 3).unwrap();
        let mut emitted: Vec<_> = batches.into_iter().flatten().collect();
        assert_eq!(emitted.len(), events.len() / bs * bs);
        // multiset containment: every emitted pair removes one copy from the log
        let mut pool = events.clone();
        pool.sort_unstable();
        emitted.sort_unstable();
        let mut j = 0;
        for e in &emitted {
            while pool[j] != *e {
                j += 1;
            }
            j += 1;
        }
    }
}
