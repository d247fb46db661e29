//! Offline metrics and the experiment runner comparing the popularity
//! index, plain two-tower retrieval (LR) and conditional retrieval (CR).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::condition::Condition;
use crate::dataset::{Dataset, ItemId, Topic, UserId};
use crate::error::{Error, Result};
use crate::retrieval::{
    build_index, retrieve, AnnConfig, FilterMode, ItemIndex, PopularityIndex, RetrievalQuery, RetrievalResult,
    ServeConfig,
};
use crate::rng::{self, stream};
use crate::tower::{user_tower_forward, Checkpoint};

/// Fraction of returned items that carry the query topic, pooled over all
/// queries.
pub fn topic_match_rate<'a>(results: impl IntoIterator<Item = &'a RetrievalResult>) -> Result<f64> {
    let (mut matched, mut returned) = (0usize, 0usize);
    for r in results {
        matched += r.matched_count();
        returned += r.len();
    }
    if returned == 0 {
        return Err(Error::UndefinedMetric("topic match rate over zero returned items".into()));
    }
    Ok(matched as f64 / returned as f64)
}

/// `|result ∩ heldout| / min(k, |heldout|)`. `None` means the query has no
/// heldout items and should be skipped.
pub fn recall_at_k(result: &[ItemId], k: usize, heldout: &BTreeSet<ItemId>) -> Option<f64> {
    if heldout.is_empty() || k == 0 {
        return None;
    }
    let hits = result.iter().take(k).filter(|i| heldout.contains(i)).count();
    Some(hits as f64 / k.min(heldout.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Index,
    Lr,
    Cr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Index => "INDEX",
            Method::Lr => "LR",
            Method::Cr => "CR",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "index" => Ok(Method::Index),
            "lr" => Ok(Method::Lr),
            "cr" => Ok(Method::Cr),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub methods: Vec<Method>,
    /// Filter modes applied to the learned methods. INDEX is inherently
    /// filtered and always gets a single row.
    pub modes: Vec<FilterMode>,
    pub k: usize,
    /// Cap on evaluation queries; 0 means all of them.
    pub max_queries: usize,
    pub seed: u64,
    pub serve: ServeConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            methods: vec![Method::Index, Method::Lr, Method::Cr],
            modes: vec![FilterMode::None, FilterMode::Streaming, FilterMode::Postfilter],
            k: 100,
            max_queries: 1_000,
            seed: 42,
            serve: ServeConfig::default(),
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("eval k must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no evaluation methods requested"));
        }
        if self.methods.iter().any(|&m| m != Method::Index) && self.modes.is_empty() {
            return Err(Error::config("no filter modes requested for learned methods"));
        }
        if self.serve.stream_batch_size == 0 || self.serve.overfetch == 0 {
            return Err(Error::config("stream_batch_size and overfetch must be at least 1"));
        }
        Ok(())
    }
}

/// One (user, topic) query and the user's heldout items.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    pub user: UserId,
    pub topic: Topic,
    pub heldout: BTreeSet<ItemId>,
}

/// One query per distinct (user, topic) obtained by drawing a topic from
/// each heldout item's topic set; items without topics give no query.
pub fn eval_queries(dataset: &Dataset, max_queries: usize, seed: u64) -> Vec<EvalQuery> {
    let mut rng = rng::seeded(seed, stream::EVAL_QUERIES);
    let mut heldout: BTreeMap<UserId, BTreeSet<ItemId>> = BTreeMap::new();
    let mut pairs = BTreeSet::new();
    for e in dataset.heldout_events() {
        heldout.entry(e.0).or_default().insert(e.1);
        let topics = &dataset.items[e.1 as usize].topics;
        if !topics.is_empty() {
            pairs.insert((e.0, topics[rng.random_range(0..topics.len())]));
        }
    }
    let mut pairs: Vec<(UserId, Topic)> = pairs.into_iter().collect();
    if max_queries > 0 && pairs.len() > max_queries {
        pairs.shuffle(&mut rng);
        pairs.truncate(max_queries);
        pairs.sort_unstable();
    }
    pairs
        .into_iter()
        .map(|(user, topic)| EvalQuery { user, topic, heldout: heldout[&user].clone() })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    /// `None` for INDEX.
    pub mode: Option<FilterMode>,
    /// `None` when no query returned anything.
    pub topic_match_rate: Option<f64>,
    pub recall: f64,
    pub mean_scanned: f64,
    pub mean_size: f64,
    pub queries: usize,
    pub truncated: usize,
}

impl ReportRow {
    pub fn mode_label(&self) -> &'static str {
        self.mode.map_or("topic", FilterMode::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub settings: EvalSettings,
    pub rows: Vec<ReportRow>,
}

const HEADER_NOTE: &str = "recall@k over each user's heldout items is an offline engagement proxy";
const COLUMNS: [&str; 8] = ["method", "mode", "topic_match_rate", "recall_at_k", "mean_scanned", "mean_size", "queries", "truncated"];

impl EvalReport {
    pub fn row(&self, method: Method, mode: Option<FilterMode>) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.mode == mode)
    }

    fn cells(row: &ReportRow) -> [String; 8] {
        [
            row.method.as_str().to_string(),
            row.mode_label().to_string(),
            row.topic_match_rate.map_or("undefined".into(), |m| format!("{m:.4}")),
            format!("{:.4}", row.recall),
            format!("{:.1}", row.mean_scanned),
            format!("{:.1}", row.mean_size),
            row.queries.to_string(),
            row.truncated.to_string(),
        ]
    }

    fn echo(&self) -> String {
        let s = &self.settings;
        format!(
            "k={} max_queries={} seed={} ef_search={} stream_batch_size={} budget={} overfetch={}",
            s.k, s.max_queries, s.seed, s.serve.ef_search, s.serve.stream_batch_size, s.serve.budget, s.serve.overfetch
        )
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {HEADER_NOTE}\n# {}\n{}\n", self.echo(), COLUMNS.join("\t"));
        for row in &self.rows {
            out.push_str(&Self::cells(row).join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_aligned(&self) -> String {
        let cells: Vec<[String; 8]> = self.rows.iter().map(Self::cells).collect();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|c| cells.iter().map(|r| r[c].len()).chain([COLUMNS[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = format!("{HEADER_NOTE}\n{}\n", self.echo());
        let line = |out: &mut String, fields: &mut dyn Iterator<Item = &str>| {
            let parts: Vec<String> = fields.zip(&widths).map(|(f, w)| format!("{f:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &mut COLUMNS.iter().copied());
        for r in &cells {
            line(&mut out, &mut r.iter().map(String::as_str));
        }
        out
    }
}

/// Checkpoints for the learned methods, as required by the requested methods.
#[derive(Debug, Clone, Copy, Default)]
pub struct Checkpoints<'a> {
    pub lr: Option<&'a Checkpoint>,
    pub cr: Option<&'a Checkpoint>,
}

/// A learned method ready to serve: its checkpoint and ANN-indexed items.
pub struct Served<'a> {
    pub checkpoint: &'a Checkpoint,
    pub index: ItemIndex,
}

impl<'a> Served<'a> {
    pub fn new(checkpoint: &'a Checkpoint, dataset: &Dataset, ann: &AnnConfig) -> Result<Self> {
        let mut index = build_index(checkpoint, dataset)?;
        index.build_ann(ann)?;
        Ok(Self { checkpoint, index })
    }

    /// The user embedding for a query. Unconditioned models ignore the topic.
    pub fn embed(&self, user: UserId, topic: Topic) -> Result<Vec<f32>> {
        let (u, _) = user_tower_forward(user as usize, Condition::Topic(topic), &self.checkpoint.params, &self.checkpoint.config)?;
        Ok(u)
    }

    pub fn query(&self, user: UserId, topic: Topic, k: usize, mode: FilterMode, serve: &ServeConfig) -> Result<RetrievalResult> {
        let q = RetrievalQuery { user_embedding: self.embed(user, topic)?, condition: Some(topic), k, filter_mode: mode };
        retrieve(&self.index, &q, serve)
    }
}

#[derive(Default)]
struct Accumulator {
    matched: usize,
    returned: usize,
    recall: f64,
    recall_n: usize,
    scanned: usize,
    queries: usize,
    truncated: usize,
}

impl Accumulator {
    fn add(&mut self, r: &RetrievalResult, k: usize, q: &EvalQuery) {
        self.matched += r.matched_count();
        self.returned += r.len();
        if let Some(x) = recall_at_k(&r.items(), k, &q.heldout) {
            self.recall += x;
            self.recall_n += 1;
        }
        self.scanned += r.scanned_count;
        self.queries += 1;
        self.truncated += r.truncated as usize;
    }

    fn finish(self, method: Method, mode: Option<FilterMode>) -> ReportRow {
        let n = self.queries.max(1) as f64;
        ReportRow {
            method,
            mode,
            topic_match_rate: (self.returned > 0).then(|| self.matched as f64 / self.returned as f64),
            recall: if self.recall_n == 0 { 0.0 } else { self.recall / self.recall_n as f64 },
            mean_scanned: self.scanned as f64 / n,
            mean_size: self.returned as f64 / n,
            queries: self.queries,
            truncated: self.truncated,
        }
    }
}

/// Runs every requested method and mode over the heldout queries.
pub fn run_experiment(
    dataset: &Dataset,
    checkpoints: Checkpoints<'_>,
    ann: &AnnConfig,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    settings.validate()?;
    let queries = eval_queries(dataset, settings.max_queries, settings.seed);
    if queries.is_empty() {
        return Err(Error::UndefinedMetric("dataset has no heldout events with topics".into()));
    }
    log::info!("evaluating {} queries at k={}", queries.len(), settings.k);
    let mut methods = settings.methods.clone();
    methods.sort_unstable();
    methods.dedup();
    let mut rows = Vec::new();
    for method in methods {
        let checkpoint = match method {
            Method::Index => {
                let index = PopularityIndex::new(dataset);
                let mut acc = Accumulator::default();
                for q in &queries {
                    acc.add(&index.retrieve(q.topic, settings.k), settings.k, q);
                }
                rows.push(acc.finish(Method::Index, None));
                continue;
            }
            Method::Lr => checkpoints.lr,
            Method::Cr => checkpoints.cr,
        };
        let checkpoint = checkpoint
            .ok_or_else(|| Error::config(format!("method {} requested without a checkpoint", method.as_str())))?;
        let served = Served::new(checkpoint, dataset, ann)?;
        let embeddings: Vec<Vec<f32>> = queries.iter().map(|q| served.embed(q.user, q.topic)).collect::<Result<_>>()?;
        let mut modes = settings.modes.clone();
        modes.dedup();
        for &mode in &modes {
            let mut acc = Accumulator::default();
            for (q, u) in queries.iter().zip(&embeddings) {
                let query = RetrievalQuery { user_embedding: u.clone(), condition: Some(q.topic), k: settings.k, filter_mode: mode };
                acc.add(&retrieve(&served.index, &query, &settings.serve)?, settings.k, q);
            }
            rows.push(acc.finish(method, Some(mode)));
        }
    }
    Ok(EvalReport { settings: settings.clone(), rows })
}
