//! Layered proximity graph over item embeddings, ordered by inner product.
//!
//! Construction follows the usual hierarchical scheme: geometric level
//! assignment, greedy descent through upper layers, a beam of width
//! `build_beam_width` at each insertion layer, and neighbor lists capped at
//! `max_degree` by the diversity heuristic. Layer 0 is repaired afterwards so
//! every node is reachable from the entry point.
//!
//! Search is exposed as a resumable [`SearchStream`]: a beam of the best
//! `ef` unemitted candidates plus the unexpanded frontier, both retained
//! between pulls. The first pull of `k` items is an ordinary beam search;
//! later pulls keep walking the graph from where the previous one stopped.

use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ItemIndex, Scored};
use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Levels above this are clamped; reached with probability ~M^-16.
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnConfig {
    pub max_degree: usize,
    pub build_beam_width: usize,
    pub query_beam_width: usize,
    pub level_multiplier: f64,
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        Self {
            max_degree: 16,
            build_beam_width: 100,
            query_beam_width: 64,
            level_multiplier: 1.0 / 16f64.ln(),
            seed: 42,
        }
    }
}

impl AnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_degree < 2 {
            return Err(Error::config("max_degree must be at least 2"));
        }
        if self.build_beam_width < self.max_degree {
            return Err(Error::config("build_beam_width must be at least max_degree"));
        }
        if self.query_beam_width == 0 {
            return Err(Error::config("query_beam_width must be positive"));
        }
        if !(self.level_multiplier.is_finite() && self.level_multiplier >= 0.0) {
            return Err(Error::config("level_multiplier must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub config: AnnConfig,
    /// `links[node][layer]`; a node appears on layers `0..=level`.
    pub links: Vec<Vec<Vec<u32>>>,
    pub entry: u32,
}

impl Graph {
    pub fn level(&self, node: usize) -> usize {
        self.links[node].len() - 1
    }

    pub fn max_level(&self) -> usize {
        self.level(self.entry as usize)
    }

    /// Nodes reachable from the entry point along layer-0 links.
    pub fn reachable_at_base(&self) -> Vec<bool> {
        let mut seen = vec![false; self.links.len()];
        let mut queue = VecDeque::from([self.entry]);
        seen[self.entry as usize] = true;
        while let Some(n) = queue.pop_front() {
            for &m in &self.links[n as usize][0] {
                if !seen[m as usize] {
                    seen[m as usize] = true;
                    queue.push_back(m);
                }
            }
        }
        seen
    }
}

/// Generation-stamped visited set, reused across insertions.
struct Visited {
    marks: Vec<u32>,
    generation: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self { marks: vec![0; n], generation: 0 }
    }

    fn reset(&mut self) {
        self.generation += 1;
    }

    /// True if newly inserted.
    fn insert(&mut self, n: u32) -> bool {
        let slot = &mut self.marks[n as usize];
        if *slot == self.generation {
            false
        } else {
            *slot = self.generation;
            true
        }
    }
}

struct Builder<'a> {
    index: &'a ItemIndex,
    config: &'a AnnConfig,
    /// Per-row lift `sqrt(max_norm² - norm²)`. Scoring item pairs with the
    /// lifted vectors makes construction a metric nearest-neighbor problem
    /// whose order matches inner product for queries (their lift is 0).
    lift: Vec<f32>,
    links: Vec<Vec<Vec<u32>>>,
    visited: Visited,
}

impl Builder<'_> {
    fn score(&self, a: u32, b: u32) -> f32 {
        self.index.dot_rows(a as usize, b as usize) + self.lift[a as usize] * self.lift[b as usize]
    }

    fn greedy(&self, q: u32, mut ep: u32, layer: usize) -> u32 {
        let mut best = self.score(q, ep);
        loop {
            let mut moved = false;
            for &n in &self.links[ep as usize][layer] {
                let s = self.score(q, n);
                if Scored::new(s, n) > Scored::new(best, ep) {
                    best = s;
                    ep = n;
                    moved = true;
                }
            }
            if !moved {
                return ep;
            }
        }
    }

    /// Beam search of width `ef` on one layer; best first.
    fn search_layer(&mut self, q: u32, entry: &[u32], ef: usize, layer: usize) -> Vec<Scored> {
        self.visited.reset();
        let mut frontier = BinaryHeap::new();
        let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &e in entry {
            if self.visited.insert(e) {
                let c = Scored::new(self.score(q, e), e);
                frontier.push(c);
                results.push(std::cmp::Reverse(c));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = frontier.pop() {
            if results.len() >= ef && c < results.peek().unwrap().0 {
                break;
            }
            for &n in &self.links[c.id as usize][layer] {
                if !self.visited.insert(n) {
                    continue;
                }
                let cand = Scored::new(self.score(q, n), n);
                if results.len() < ef || cand > results.peek().unwrap().0 {
                    frontier.push(cand);
                    results.push(std::cmp::Reverse(cand));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_unstable_by(|a, b| b.cmp(a));
        out
    }

    /// Diversity heuristic: keep a candidate only if it scores higher with
    /// the base node than with every neighbor already kept.
    fn select(&self, candidates: &[Scored], m: usize) -> Vec<u32> {
        let mut kept: Vec<u32> = Vec::with_capacity(m);
        for c in candidates {
            if kept.len() == m {
                break;
            }
            if kept.iter().all(|&r| self.score(c.id, r) < c.score) {
                kept.push(c.id);
            }
        }
        kept
    }

    fn shrink(&mut self, node: u32, layer: usize) {
        let m = self.config.max_degree;
        if self.links[node as usize][layer].len() <= m {
            return;
        }
        let mut cands: Vec<Scored> = self.links[node as usize][layer]
            .iter()
            .map(|&n| Scored::new(self.score(node, n), n))
            .collect();
        cands.sort_unstable_by(|a, b| b.cmp(a));
        self.links[node as usize][layer] = self.select(&cands, m);
    }

    fn insert(&mut self, q: u32, level: usize, entry: &mut u32) {
        let top = self.links[*entry as usize].len() - 1;
        let mut ep = *entry;
        for layer in (level + 1..=top).rev() {
            ep = self.greedy(q, ep, layer);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(top)).rev() {
            let w = self.search_layer(q, &eps, self.config.build_beam_width, layer);
            let neighbors = self.select(&w, self.config.max_degree);
            for &n in &neighbors {
                self.links[n as usize][layer].push(q);
                self.shrink(n, layer);
            }
            self.links[q as usize][layer] = neighbors;
            eps = w.iter().map(|c| c.id).collect();
        }
        if level > top {
            *entry = q;
        }
    }

    /// Links every node unreachable at layer 0 back into the entry component.
    fn repair(&mut self, entry: u32) -> Result<()> {
        let m = self.config.max_degree;
        let n = self.links.len();
        for _round in 0..n {
            let graph = Graph { config: self.config.clone(), links: std::mem::take(&mut self.links), entry };
            let reachable = graph.reachable_at_base();
            self.links = graph.links;
            let Some(orphan) = reachable.iter().position(|r| !r) else {
                return Ok(());
            };
            let orphan = orphan as u32;
            // best reachable host with a free slot, else the best host overall
            let mut free: Option<Scored> = None;
            let mut any: Option<Scored> = None;
            for host in (0..n).filter(|&h| reachable[h]) {
                let c = Scored::new(self.score(orphan, host as u32), host as u32);
                if any.is_none_or(|a| c > a) {
                    any = Some(c);
                }
                if self.links[host][0].len() < m && free.is_none_or(|f| c > f) {
                    free = Some(c);
                }
            }
            let host = match (free, any) {
                (Some(f), _) => f.id,
                (None, Some(a)) => {
                    // evict the host's neighbor with the most in-links at layer 0
                    let mut indeg = vec![0usize; n];
                    for l in &self.links {
                        for &t in &l[0] {
                            indeg[t as usize] += 1;
                        }
                    }
                    let list = &mut self.links[a.id as usize][0];
                    let (pos, _) = list
                        .iter()
                        .enumerate()
                        .max_by_key(|(_, &t)| (indeg[t as usize], std::cmp::Reverse(t)))
                        .ok_or_else(|| Error::Contract("host with zero degree cannot be full".into()))?;
                    list.remove(pos);
                    a.id
                }
                (None, None) => return Err(Error::Contract("graph has no reachable nodes".into())),
            };
            self.links[host as usize][0].push(orphan);
            if self.links[orphan as usize][0].len() < m && !self.links[orphan as usize][0].contains(&host) {
                self.links[orphan as usize][0].push(host);
            }
        }
        Err(Error::Contract("layer-0 connectivity repair did not converge".into()))
    }
}

/// Builds the graph over every row of `index`. Deterministic in `config.seed`.
pub fn build_graph(index: &ItemIndex, config: &AnnConfig) -> Result<Graph> {
    config.validate()?;
    let n = index.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot build a graph over an empty index".into()));
    }
    let mut rng = rng::seeded(config.seed, stream::ANN_LEVELS);
    let levels: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            ((-u.ln() * config.level_multiplier).floor() as usize).min(MAX_LEVEL)
        })
        .collect();
    let sq_norms: Vec<f32> = (0..n).map(|r| index.dot_rows(r, r)).collect();
    let max_sq = sq_norms.iter().copied().fold(0.0f32, f32::max);
    let mut builder = Builder {
        index,
        config,
        lift: sq_norms.iter().map(|&sq| (max_sq - sq).max(0.0).sqrt()).collect(),
        links: levels.iter().map(|&l| vec![Vec::new(); l + 1]).collect(),
        visited: Visited::new(n),
    };
    // Random insertion order: inserting rows in a geometric order (sorted ids
    // over a curve, say) leaves the early graph without paths around it.
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut rng);
    let mut entry = order[0];
    for &q in &order[1..] {
        builder.insert(q, levels[q as usize], &mut entry);
    }
    builder.repair(entry)?;
    Ok(Graph { config: config.clone(), links: builder.links, entry })
}

/// Resumable best-first traversal of layer 0.
pub struct SearchStream<'a> {
    index: &'a ItemIndex,
    graph: &'a Graph,
    query: &'a [f32],
    ef: usize,
    visited: Vec<bool>,
    frontier: BinaryHeap<Scored>,
    beam: BTreeSet<Scored>,
    reserve: BinaryHeap<Scored>,
    evaluations: usize,
}

impl<'a> SearchStream<'a> {
    pub fn new(index: &'a ItemIndex, query: &'a [f32], ef: usize) -> Result<Self> {
        let graph = index
            .graph
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("index has no ANN graph; call build_ann first".into()))?;
        if query.len() != index.dim {
            return Err(Error::Dimension { expected: index.dim, actual: query.len() });
        }
        if ef == 0 {
            return Err(Error::InvalidArgument("beam width must be positive".into()));
        }
        let mut s = Self {
            index,
            graph,
            query,
            ef,
            visited: vec![false; index.len()],
            frontier: BinaryHeap::new(),
            beam: BTreeSet::new(),
            reserve: BinaryHeap::new(),
            evaluations: 0,
        };
        // Every node scored on the way down seeds layer 0. That includes the
        // entry point, the root the connectivity repair guarantees.
        let mut seeds = Vec::new();
        let mut ep = graph.entry;
        let mut best = s.eval(ep);
        s.visited[ep as usize] = true;
        seeds.push(best);
        for layer in (1..=graph.max_level()).rev() {
            loop {
                let mut moved = false;
                for &n in &graph.links[ep as usize][layer] {
                    let c = if s.visited[n as usize] {
                        Scored::new(s.index.dot_query(n as usize, query), n)
                    } else {
                        s.visited[n as usize] = true;
                        let c = s.eval(n);
                        seeds.push(c);
                        c
                    };
                    if c > best {
                        best = c;
                        ep = n;
                        moved = true;
                    }
                }
                if !moved {
                    break;
                }
            }
        }
        for c in seeds {
            s.admit(c);
        }
        Ok(s)
    }

    fn admit(&mut self, c: Scored) {
        self.frontier.push(c);
        self.beam.insert(c);
        if self.beam.len() > self.ef {
            if let Some(worst) = self.beam.pop_first() {
                self.reserve.push(worst);
            }
        }
    }

    fn eval(&mut self, n: u32) -> Scored {
        self.evaluations += 1;
        Scored::new(self.index.dot_query(n as usize, self.query), n)
    }

    /// Inner-product evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    fn converge(&mut self) {
        loop {
            while self.beam.len() < self.ef {
                match self.reserve.pop() {
                    Some(c) => {
                        self.beam.insert(c);
                    }
                    None => break,
                }
            }
            let Some(&best) = self.frontier.peek() else { return };
            if self.beam.len() >= self.ef && self.beam.first().is_some_and(|&worst| best < worst) {
                return;
            }
            self.frontier.pop();
            for k in 0..self.graph.links[best.id as usize][0].len() {
                let n = self.graph.links[best.id as usize][0][k];
                if std::mem::replace(&mut self.visited[n as usize], true) {
                    continue;
                }
                let c = self.eval(n);
                self.admit(c);
            }
        }
    }

    /// The next best unemitted candidates, at most `n`; empty once the
    /// reachable graph is exhausted.
    pub fn next_batch(&mut self, n: usize) -> Vec<Scored> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            self.converge();
            match self.beam.pop_last() {
                Some(c) => out.push(c),
                None => break,
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::tests::random_index;

    #[test]
    fn single_node_graph() {
        let mut index = random_index(1, 4, 1);
        index.build_ann(&AnnConfig::default()).unwrap();
        let g = index.graph.as_ref().unwrap();
        assert_eq!(g.entry, 0);
        assert!(g.links[0].iter().all(|l| l.is_empty()));
    }

    #[test]
    fn empty_index_is_an_error() {
        let index = random_index(0, 4, 1);
        assert!(build_graph(&index, &AnnConfig::default()).is_err());
    }

    #[test]
    fn structure_invariants() {
        let mut index = random_index(600, 8, 2);
        let cfg = AnnConfig { max_degree: 6, build_beam_width: 20, ..AnnConfig::default() };
        index.build_ann(&cfg).unwrap();
        let g = index.graph.as_ref().unwrap();
        for (node, layers) in g.links.iter().enumerate() {
            for (layer, list) in layers.iter().enumerate() {
                assert!(list.len() <= 6, "node {node} layer {layer} degree {}", list.len());
                for &m in list {
                    assert!((m as usize) < 600 && m as usize != node);
                    assert!(g.level(m as usize) >= layer);
                }
            }
        }
        assert!(g.reachable_at_base().iter().all(|&r| r));
        assert!(g.links.iter().map(|l| l.len() - 1).max().unwrap() == g.max_level());
    }

    #[test]
    fn build_is_deterministic() {
        let mut a = random_index(300, 8, 3);
        let mut b = random_index(300, 8, 3);
        a.build_ann(&AnnConfig::default()).unwrap();
        b.build_ann(&AnnConfig::default()).unwrap();
        assert_eq!(a.graph, b.graph);
        let mut c = random_index(300, 8, 3);
        c.build_ann(&AnnConfig { seed: 9, ..AnnConfig::default() }).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn exhaustive_stream_emits_in_exact_order() {
        let mut index = random_index(250, 6, 4);
        index.build_ann(&AnnConfig { max_degree: 4, build_beam_width: 8, ..AnnConfig::default() }).unwrap();
        let q = vec![0.3, -0.2, 0.9, 0.1, -0.5, 0.4];
        let mut s = SearchStream::new(&index, &q, 250).unwrap();
        let mut all = Vec::new();
        loop {
            let b = s.next_batch(7);
            if b.is_empty() {
                break;
            }
            all.extend(b);
        }
        assert_eq!(all.len(), 250);
        assert!(all.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn stream_never_repeats() {
        let mut index = random_index(400, 6, 5);
        index.build_ann(&AnnConfig::default()).unwrap();
        let q = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut s = SearchStream::new(&index, &q, 16).unwrap();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..40 {
            for c in s.next_batch(10) {
                assert!(seen.insert(c.id));
            }
        }
        assert_eq!(seen.len(), 400);
    }
}
