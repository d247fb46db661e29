//! Serving: exact and graph-based top-k over item embeddings, topic filters,
//! and the popularity index baseline.
//!
//! Ranking everywhere is by descending dot product, ties broken by ascending
//! item id.

pub mod hnsw;
mod io;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, ItemId, Topic};
use crate::error::{Error, Result};
use crate::tower::{item_tower_forward, Checkpoint, Vocab};

pub use hnsw::{AnnConfig, Graph, SearchStream};
pub use io::{load_index, save_index};

/// A candidate with its score. Orders by score, then by *smaller* id, so the
/// maximum is the best-ranked candidate.
#[derive(Debug, Clone, Copy)]
pub struct Scored {
    pub score: f32,
    pub id: u32,
}

impl Scored {
    pub fn new(score: f32, id: u32) -> Self {
        Self { score, id }
    }
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.id.cmp(&self.id))
    }
}

/// Frozen item embeddings plus the metadata needed to filter and rank them.
/// Row `r` holds item `item_ids[r]`; ids ascend with rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemIndex {
    pub dim: usize,
    pub item_ids: Vec<ItemId>,
    pub embeddings: Vec<f32>,
    pub topics: Vec<Vec<Topic>>,
    pub popularity: Vec<u64>,
    pub graph: Option<Graph>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub item: ItemId,
    pub score: f32,
    /// Whether the item carries the query's condition topic.
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    pub scanned_count: usize,
    /// The scan budget ran out before `k` matches were found.
    pub truncated: bool,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn items(&self) -> Vec<ItemId> {
        self.hits.iter().map(|h| h.item).collect()
    }

    pub fn matched_count(&self) -> usize {
        self.hits.iter().filter(|h| h.matched).count()
    }
}

impl ItemIndex {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn embedding(&self, row: usize) -> &[f32] {
        &self.embeddings[row * self.dim..(row + 1) * self.dim]
    }

    pub(crate) fn dot_rows(&self, a: usize, b: usize) -> f32 {
        dot(self.embedding(a), self.embedding(b))
    }

    pub(crate) fn dot_query(&self, row: usize, query: &[f32]) -> f32 {
        dot(self.embedding(row), query)
    }

    pub fn has_topic(&self, row: usize, topic: Topic) -> bool {
        self.topics[row].binary_search(&topic).is_ok()
    }

    /// Builds the ANN graph in place.
    pub fn build_ann(&mut self, config: &AnnConfig) -> Result<()> {
        self.graph = Some(hnsw::build_graph(self, config)?);
        Ok(())
    }

    fn hits(&self, scored: impl IntoIterator<Item = Scored>, condition: Option<Topic>) -> Vec<Hit> {
        scored
            .into_iter()
            .map(|c| Hit {
                item: self.item_ids[c.id as usize],
                score: c.score,
                matched: condition.is_some_and(|t| self.has_topic(c.id as usize, t)),
            })
            .collect()
    }

    fn check_query(&self, query: &[f32], k: usize) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, actual: query.len() });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Materializes the item tower output for every item of `dataset`.
pub fn build_index(checkpoint: &Checkpoint, dataset: &Dataset) -> Result<ItemIndex> {
    let vocab = Vocab::of(dataset);
    if checkpoint.vocab() != vocab {
        return Err(Error::config(format!(
            "checkpoint vocabulary {:?} does not match dataset {:?}",
            checkpoint.vocab(),
            vocab
        )));
    }
    let dim = checkpoint.config.output_dim;
    let mut embeddings = Vec::with_capacity(dataset.num_items() * dim);
    for item in &dataset.items {
        let (v, _) = item_tower_forward(item.id as usize, &checkpoint.params, &checkpoint.config)?;
        embeddings.extend_from_slice(&v);
    }
    Ok(ItemIndex {
        dim,
        item_ids: dataset.items.iter().map(|i| i.id).collect(),
        embeddings,
        topics: dataset.items.iter().map(|i| i.topics.clone()).collect(),
        popularity: dataset::item_popularity(dataset),
        graph: None,
    })
}

/// Brute-force top-k over rows accepted by `predicate`.
pub fn exact_topk(
    index: &ItemIndex,
    query: &[f32],
    k: usize,
    condition: Option<Topic>,
    predicate: impl Fn(usize) -> bool,
) -> Result<RetrievalResult> {
    index.check_query(query, k)?;
    let mut scored: Vec<Scored> = (0..index.len())
        .filter(|&r| predicate(r))
        .map(|r| Scored::new(index.dot_query(r, query), r as u32))
        .collect();
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, |a, b| b.cmp(a));
        scored.truncate(k);
    }
    scored.sort_unstable_by(|a, b| b.cmp(a));
    Ok(RetrievalResult { hits: index.hits(scored, condition), scanned_count: index.len(), truncated: false })
}

/// Exact top-`k` restricted to items carrying `topic`.
pub fn exact_filtered_topk(index: &ItemIndex, query: &[f32], topic: Topic, k: usize) -> Result<RetrievalResult> {
    exact_topk(index, query, k, Some(topic), |r| index.has_topic(r, topic))
}

/// Unfiltered graph search with beam `ef`; `scanned_count` counts inner
/// products evaluated.
pub fn ann_search(index: &ItemIndex, query: &[f32], k: usize, ef: usize, condition: Option<Topic>) -> Result<RetrievalResult> {
    index.check_query(query, k)?;
    if ef < k {
        return Err(Error::InvalidArgument(format!("beam width {ef} is smaller than k = {k}")));
    }
    let mut stream = SearchStream::new(index, query, ef)?;
    let mut found = stream.next_batch(k);
    found.sort_unstable_by(|a, b| b.cmp(a));
    Ok(RetrievalResult { hits: index.hits(found, condition), scanned_count: stream.evaluations(), truncated: false })
}

/// Pulls candidates from the graph `batch_size` at a time, keeping those
/// that carry `topic`, until `k` matches are found or `budget` candidates
/// have been drawn. `scanned_count` counts candidates drawn.
pub fn streaming_filtered_search(
    index: &ItemIndex,
    query: &[f32],
    topic: Topic,
    k: usize,
    ef: usize,
    batch_size: usize,
    budget: usize,
) -> Result<RetrievalResult> {
    index.check_query(query, k)?;
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    if budget < k {
        return Err(Error::InvalidArgument(format!("budget {budget} is smaller than k = {k}")));
    }
    let mut stream = SearchStream::new(index, query, ef)?;
    let mut matches = Vec::new();
    let mut drawn = 0;
    let mut exhausted = false;
    while matches.len() < k && drawn < budget {
        let batch = stream.next_batch(batch_size.min(budget - drawn));
        if batch.is_empty() {
            exhausted = true;
            break;
        }
        drawn += batch.len();
        matches.extend(batch.into_iter().filter(|c| index.has_topic(c.id as usize, topic)));
    }
    // every node is emitted at most once, so drawing them all drains the stream
    let truncated = matches.len() < k && !exhausted && drawn < index.len();
    matches.sort_unstable_by(|a, b| b.cmp(a));
    matches.truncate(k);
    Ok(RetrievalResult { hits: index.hits(matches, Some(topic)), scanned_count: drawn, truncated })
}

/// Exact unfiltered top-`k·overfetch`, then keep items carrying `topic`.
pub fn postfilter_oracle(
    index: &ItemIndex,
    query: &[f32],
    topic: Topic,
    k: usize,
    overfetch: usize,
) -> Result<RetrievalResult> {
    if overfetch == 0 {
        return Err(Error::InvalidArgument("overfetch factor must be at least 1".into()));
    }
    let wide = exact_topk(index, query, k.saturating_mul(overfetch), Some(topic), |_| true)?;
    let hits: Vec<Hit> = wide.hits.into_iter().filter(|h| h.matched).take(k).collect();
    Ok(RetrievalResult { hits, scanned_count: wide.scanned_count, truncated: false })
}

/// Topic → items ordered by train popularity (descending, ties by id).
#[derive(Debug, Clone)]
pub struct PopularityIndex {
    by_topic: Vec<Vec<(ItemId, u64)>>,
}

impl PopularityIndex {
    pub fn new(dataset: &Dataset) -> Self {
        let popularity = dataset::item_popularity(dataset);
        let by_topic = dataset
            .items_by_topic()
            .into_iter()
            .map(|items| {
                let mut v: Vec<(ItemId, u64)> = items.into_iter().map(|i| (i, popularity[i as usize])).collect();
                v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                v
            })
            .collect();
        Self { by_topic }
    }

    /// `score` carries the popularity count; `scanned_count` the items read.
    pub fn retrieve(&self, topic: Topic, k: usize) -> RetrievalResult {
        let hits: Vec<Hit> = self
            .by_topic
            .get(topic as usize)
            .map(|v| v.as_slice())
            .unwrap_or_default()
            .iter()
            .take(k)
            .map(|&(item, count)| Hit { item, score: count as f32, matched: true })
            .collect();
        RetrievalResult { scanned_count: hits.len(), hits, truncated: false }
    }
}

pub fn popularity_index_retrieve(dataset: &Dataset, topic: Topic, k: usize) -> RetrievalResult {
    PopularityIndex::new(dataset).retrieve(topic, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    None,
    Streaming,
    Postfilter,
}

impl FilterMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::None => "none",
            FilterMode::Streaming => "streaming",
            FilterMode::Postfilter => "postfilter",
        }
    }
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FilterMode::None),
            "streaming" => Ok(FilterMode::Streaming),
            "postfilter" | "postfilter_oracle" => Ok(FilterMode::Postfilter),
            other => Err(Error::InvalidArgument(format!("unknown filter mode `{other}`"))),
        }
    }
}

/// Serving-time knobs shared by every learned-retrieval query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    /// Beam width; raised to `k` when smaller.
    pub ef_search: usize,
    pub stream_batch_size: usize,
    pub budget: usize,
    pub overfetch: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { ef_search: 64, stream_batch_size: 32, budget: 5_000, overfetch: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub user_embedding: Vec<f32>,
    pub condition: Option<Topic>,
    pub k: usize,
    pub filter_mode: FilterMode,
}

/// Runs a query through the requested filter mode.
pub fn retrieve(index: &ItemIndex, query: &RetrievalQuery, serve: &ServeConfig) -> Result<RetrievalResult> {
    let ef = serve.ef_search.max(query.k);
    let need_topic = || {
        query
            .condition
            .ok_or_else(|| Error::InvalidArgument(format!("filter mode {} needs a topic", query.filter_mode.as_str())))
    };
    match query.filter_mode {
        FilterMode::None => ann_search(index, &query.user_embedding, query.k, ef, query.condition),
        FilterMode::Streaming => streaming_filtered_search(
            index,
            &query.user_embedding,
            need_topic()?,
            query.k,
            ef,
            serve.stream_batch_size,
            serve.budget.max(query.k),
        ),
        FilterMode::Postfilter => postfilter_oracle(index, &query.user_embedding, need_topic()?, query.k, serve.overfetch),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, GenConfig, Item, User};
    use crate::rng::seeded;
    use crate::tower::{ModelParams, TowerConfig};
    use rand::Rng;

    /// Random unit vectors with 1-3 topics each out of 8.
    pub(crate) fn random_index(n: usize, dim: usize, seed: u64) -> ItemIndex {
        let mut rng = seeded(seed, 77);
        let mut embeddings = Vec::with_capacity(n * dim);
        let mut topics = Vec::with_capacity(n);
        for _ in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            embeddings.extend(v.iter().map(|x| x / norm));
            let mut t: Vec<Topic> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..8)).collect();
            t.sort_unstable();
            t.dedup();
            topics.push(t);
        }
        ItemIndex {
            dim,
            item_ids: (0..n as u32).collect(),
            embeddings,
            topics,
            popularity: vec![0; n],
            graph: None,
        }
    }

    /// Full sort of every row, independent of the selection path.
    fn naive_topk(index: &ItemIndex, q: &[f32], k: usize, pred: impl Fn(usize) -> bool) -> Vec<ItemId> {
        let mut all: Vec<(f32, u32)> = (0..index.len())
            .filter(|&r| pred(r))
            .map(|r| (index.embedding(r).iter().zip(q).map(|(a, b)| a * b).sum(), r as u32))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|x| x.1).collect()
    }

    fn random_query(dim: usize, rng: &mut impl Rng) -> Vec<f32> {
        (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn scored_order_breaks_ties_by_id() {
        assert!(Scored::new(1.0, 5) > Scored::new(1.0, 6));
        assert!(Scored::new(2.0, 9) > Scored::new(1.0, 0));
    }

    #[test]
    fn exact_topk_edge_cases() {
        let index = random_index(30, 4, 1);
        let q = [0.5, 0.5, 0.0, -0.1];
        assert!(exact_topk(&index, &q, 5, None, |_| false).unwrap().is_empty());
        let all = exact_topk(&index, &q, 30, None, |_| true).unwrap();
        assert_eq!(all.len(), 30);
        assert!(all.hits.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(all.scanned_count, 30);
        assert!(exact_topk(&index, &q, 0, None, |_| true).is_err());
    }

    #[test]
    fn exact_topk_ties_ascend_by_id() {
        let mut index = random_index(10, 2, 1);
        index.embeddings = vec![1.0, 0.0].repeat(10);
        let r = exact_topk(&index, &[1.0, 0.0], 4, None, |_| true).unwrap();
        assert_eq!(r.items(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn exact_topk_matches_naive_sort() {
        let index = random_index(200, 8, 2);
        let mut rng = seeded(3, 0);
        for _ in 0..50 {
            let q = random_query(8, &mut rng);
            let k = rng.random_range(1..60);
            let t: Topic = rng.random_range(0..8);
            assert_eq!(exact_topk(&index, &q, k, None, |_| true).unwrap().items(), naive_topk(&index, &q, k, |_| true));
            let f = exact_filtered_topk(&index, &q, t, k).unwrap();
            assert_eq!(f.items(), naive_topk(&index, &q, k, |r| index.has_topic(r, t)));
            assert!(f.hits.iter().all(|h| h.matched));
        }
    }

    #[test]
    fn build_index_matches_item_tower() {
        let d = generate_synthetic(&GenConfig { num_users: 20, num_items: 150, num_topics: 5, events_per_user: 5, ..GenConfig::default() }).unwrap();
        let config = TowerConfig { hidden_sizes: vec![12], output_dim: 6, ..TowerConfig::default() };
        let params = ModelParams::init(&config, Vocab::of(&d), &mut seeded(4, 0));
        let ck = Checkpoint { config: config.clone(), seed: 4, params };
        let index = build_index(&ck, &d).unwrap();
        assert_eq!(index, build_index(&ck, &d).unwrap());
        assert_eq!(index.popularity, dataset::item_popularity(&d));
        let mut rng = seeded(5, 0);
        for _ in 0..100 {
            let i = rng.random_range(0..150);
            let (v, _) = item_tower_forward(i, &ck.params, &config).unwrap();
            assert_eq!(index.embedding(i), v.as_slice());
        }
        let zero = Checkpoint { params: ModelParams::zeros(&config, Vocab::of(&d)), ..ck.clone() };
        assert!(build_index(&zero, &d).unwrap().embeddings.iter().all(|&x| x == 0.0));

        let other = generate_synthetic(&GenConfig { num_users: 21, num_items: 150, num_topics: 5, events_per_user: 5, ..GenConfig::default() }).unwrap();
        assert!(matches!(build_index(&ck, &other), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn ann_search_requires_graph_and_beam() {
        let index = random_index(10, 4, 1);
        assert!(matches!(ann_search(&index, &[1.0; 4], 2, 10, None), Err(Error::InvalidArgument(m)) if m.contains("build_ann")));
        let mut index = index;
        index.build_ann(&AnnConfig::default()).unwrap();
        assert!(ann_search(&index, &[1.0; 4], 5, 4, None).is_err());
    }

    #[test]
    fn ann_single_item() {
        let mut index = random_index(1, 4, 1);
        index.build_ann(&AnnConfig::default()).unwrap();
        let r = ann_search(&index, &[1.0, 0.0, 0.0, 0.0], 1, 1, None).unwrap();
        assert_eq!(r.items(), vec![0]);
    }

    #[test]
    fn ann_self_retrieval() {
        let mut index = random_index(1_000, 16, 6);
        index.build_ann(&AnnConfig::default()).unwrap();
        for i in (0..1_000).step_by(10) {
            let q = index.embedding(i).to_vec();
            let r = ann_search(&index, &q, 1, 200, None).unwrap();
            assert_eq!(r.items(), vec![i as u32]);
        }
    }

    #[test]
    fn exhaustive_beam_equals_exact() {
        let mut index = random_index(300, 8, 7);
        index.build_ann(&AnnConfig { max_degree: 5, build_beam_width: 10, ..AnnConfig::default() }).unwrap();
        let mut rng = seeded(8, 0);
        for _ in 0..20 {
            let q = random_query(8, &mut rng);
            let k = rng.random_range(1..40);
            let a = ann_search(&index, &q, k, 300, None).unwrap();
            assert_eq!(a.items(), exact_topk(&index, &q, k, None, |_| true).unwrap().items());
        }
    }

    #[test]
    fn streaming_vacuous_filter_equals_ann() {
        let mut index = random_index(500, 8, 9);
        index.topics = vec![vec![0]; 500];
        index.build_ann(&AnnConfig::default()).unwrap();
        let q = random_query(8, &mut seeded(1, 1));
        let plain = ann_search(&index, &q, 10, 64, None).unwrap();
        let s = streaming_filtered_search(&index, &q, 0, 10, 64, 4, 1_000).unwrap();
        assert_eq!(s.items(), plain.items());
        assert!(s.scanned_count >= 10 && s.scanned_count < 10 + 4);
        assert!(!s.truncated);
    }

    #[test]
    fn streaming_unmatched_condition_exhausts_budget() {
        let mut index = random_index(500, 8, 10);
        index.build_ann(&AnnConfig::default()).unwrap();
        let q = random_query(8, &mut seeded(1, 2));
        let r = streaming_filtered_search(&index, &q, 99, 5, 64, 16, 300).unwrap();
        assert!(r.is_empty());
        assert!(r.truncated);
        assert_eq!(r.scanned_count, 300);
    }

    #[test]
    fn streaming_at_full_beam_equals_filtered_exact() {
        let mut index = random_index(400, 8, 11);
        index.build_ann(&AnnConfig { max_degree: 8, build_beam_width: 20, ..AnnConfig::default() }).unwrap();
        let mut rng = seeded(12, 0);
        for _ in 0..50 {
            let q = random_query(8, &mut rng);
            let t: Topic = rng.random_range(0..8);
            let k = rng.random_range(1..30);
            let s = streaming_filtered_search(&index, &q, t, k, 400, 13, 400).unwrap();
            assert_eq!(s.items(), exact_filtered_topk(&index, &q, t, k).unwrap().items());
        }
    }

    #[test]
    fn streaming_budget_monotone() {
        let mut index = random_index(800, 8, 13);
        index.build_ann(&AnnConfig::default()).unwrap();
        let mut rng = seeded(14, 0);
        for _ in 0..20 {
            let q = random_query(8, &mut rng);
            let t: Topic = rng.random_range(0..8);
            let mut last = 0;
            for budget in [20, 50, 100, 200, 400, 800] {
                let r = streaming_filtered_search(&index, &q, t, 20, 32, 10, budget).unwrap();
                assert!(r.len() >= last);
                assert!(r.hits.iter().all(|h| h.matched));
                last = r.len();
            }
        }
    }

    #[test]
    fn postfilter_cases() {
        let index = random_index(200, 8, 15);
        let mut rng = seeded(16, 0);
        for _ in 0..20 {
            let q = random_query(8, &mut rng);
            let t: Topic = rng.random_range(0..8);
            let full = postfilter_oracle(&index, &q, t, 10, 20).unwrap();
            assert_eq!(full.items(), exact_filtered_topk(&index, &q, t, 10).unwrap().items());
            let f1 = postfilter_oracle(&index, &q, t, 10, 1).unwrap();
            let f10 = postfilter_oracle(&index, &q, t, 10, 10).unwrap();
            assert!(f10.len() >= f1.len());
        }
        // top-k all match: factor 1 is already exact
        let mut index = index;
        index.topics = vec![vec![3]; 200];
        let q = random_query(8, &mut rng);
        assert_eq!(postfilter_oracle(&index, &q, 3, 7, 1).unwrap().items(), exact_filtered_topk(&index, &q, 3, 7).unwrap().items());
    }

    #[test]
    fn oracle_dominates_approximate_methods() {
        let mut index = random_index(1_000, 8, 17);
        index.build_ann(&AnnConfig { max_degree: 4, build_beam_width: 8, ..AnnConfig::default() }).unwrap();
        let mut rng = seeded(18, 0);
        for _ in 0..30 {
            let q = random_query(8, &mut rng);
            let t: Topic = rng.random_range(0..8);
            let exact = exact_filtered_topk(&index, &q, t, 15).unwrap();
            let approx = streaming_filtered_search(&index, &q, t, 15, 16, 8, 200).unwrap();
            for (e, a) in exact.hits.iter().zip(&approx.hits) {
                assert!(e.score >= a.score);
            }
        }
    }

    fn toy_dataset(counts: &[u64], topics: &[&[u32]]) -> Dataset {
        let mut engagements = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                engagements.push(crate::dataset::Engagement { user: 0, item: i as u32, split: crate::dataset::Split::Train });
            }
        }
        Dataset {
            topic_count: 3,
            users: vec![User { id: 0, feature_id: 0, affinity: None }],
            items: topics.iter().enumerate().map(|(i, t)| Item { id: i as u32, feature_id: i as u32, topics: t.to_vec() }).collect(),
            engagements,
        }
    }

    #[test]
    fn popularity_index_cases() {
        let d = toy_dataset(&[5, 3, 9], &[&[0], &[0], &[0]]);
        assert_eq!(popularity_index_retrieve(&d, 0, 2).items(), vec![2, 0]);
        assert!(popularity_index_retrieve(&d, 1, 5).is_empty());
        assert!(popularity_index_retrieve(&d, 7, 5).is_empty());
        let ties = toy_dataset(&[2, 2, 2, 2], &[&[1], &[1, 2], &[1], &[1]]);
        let mut reference: Vec<u32> = (0..4).collect();
        reference.sort_by_key(|&i| (std::cmp::Reverse(2u64), i));
        assert_eq!(popularity_index_retrieve(&ties, 1, 4).items(), reference);
    }

    #[test]
    fn retrieve_dispatch() {
        let mut index = random_index(300, 8, 19);
        index.build_ann(&AnnConfig::default()).unwrap();
        let q = RetrievalQuery { user_embedding: vec![0.1; 8], condition: None, k: 5, filter_mode: FilterMode::Streaming };
        assert!(retrieve(&index, &q, &ServeConfig::default()).is_err());
        let q = RetrievalQuery { condition: Some(2), ..q };
        for mode in [FilterMode::None, FilterMode::Streaming, FilterMode::Postfilter] {
            let r = retrieve(&index, &RetrievalQuery { filter_mode: mode, ..q.clone() }, &ServeConfig::default()).unwrap();
            assert!(r.len() <= 5);
            assert!(r.hits.windows(2).all(|w| w[0].score >= w[1].score));
            if mode != FilterMode::None {
                assert!(r.hits.iter().all(|h| h.matched));
            }
        }
        assert_eq!("postfilter".parse::<FilterMode>().unwrap(), FilterMode::Postfilter);
        assert!("bogus".parse::<FilterMode>().is_err());
    }
}
