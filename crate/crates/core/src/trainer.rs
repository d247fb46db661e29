//! Contrastive training of the two towers with in-batch negatives.

mod gradcheck;
pub mod loss;
pub mod negatives;
pub mod optim;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::condition::{Condition, ConditionSampler};
use crate::dataset::{self, Dataset, ItemId, UserId};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::tower::{
    item_tower_forward, tower_backward, user_tower_forward, Checkpoint, ModelParams, ParamGrads, Real, TowerConfig,
    Vocab,
};

pub use gradcheck::{grad_check, GradCheck};
pub use loss::{alignment_loss, inbatch_softmax_loss, sampled_softmax_loss};
pub use negatives::{logq_corrections, logq_table, sample_hard_negatives, HardNegativeSampler};
pub use optim::{Optimizer, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub optimizer: OptimizerKind,
    pub logq_correction: bool,
    /// Same-condition negatives appended to each row.
    pub hard_negatives: usize,
    /// Weight of the squared distance between user output and condition row.
    pub alignment_weight: f64,
    pub resample_per_epoch: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 10,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            logq_correction: false,
            hard_negatives: 0,
            alignment_weight: 0.0,
            resample_per_epoch: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, tower: &TowerConfig) -> Result<()> {
        tower.validate()?;
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2 for in-batch negatives"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if !(self.alignment_weight.is_finite() && self.alignment_weight >= 0.0) {
            return Err(Error::config("alignment_weight must be finite and non-negative"));
        }
        if self.alignment_weight > 0.0 {
            if !tower.conditional {
                return Err(Error::config("alignment loss requires a conditional user tower"));
            }
            if tower.embed_dim_condition != tower.output_dim {
                return Err(Error::config(format!(
                    "alignment loss requires embed_dim_condition ({}) == output_dim ({})",
                    tower.embed_dim_condition, tower.output_dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub batch_losses: Vec<f64>,
    pub checkpoint: Checkpoint,
    pub wall_clock: Duration,
}

impl TrainReport {
    /// `epoch<TAB>mean_loss` lines.
    pub fn loss_curve_tsv(&self) -> String {
        self.epoch_losses
            .iter()
            .enumerate()
            .map(|(e, l)| format!("{e}\t{l:?}\n"))
            .collect()
    }
}

/// Everything one optimization step needs, with conditions and negatives
/// already drawn.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub users: Vec<UserId>,
    pub items: Vec<ItemId>,
    pub conditions: Vec<Condition>,
    pub hard_negatives: Vec<Vec<ItemId>>,
    pub corrections: Option<Vec<f64>>,
    pub hard_corrections: Option<Vec<Vec<f64>>>,
    pub alignment_weight: f64,
}

impl BatchInput {
    fn assemble(
        dataset_items: &[(UserId, ItemId)],
        conditions: Vec<Condition>,
        hard_negatives: Vec<Vec<ItemId>>,
        log_q: Option<&[f64]>,
        alignment_weight: f64,
    ) -> Self {
        let users: Vec<UserId> = dataset_items.iter().map(|p| p.0).collect();
        let items: Vec<ItemId> = dataset_items.iter().map(|p| p.1).collect();
        let lookup = |table: &[f64], row: &[ItemId]| row.iter().map(|&i| table[i as usize]).collect::<Vec<f64>>();
        let corrections = log_q.map(|t| lookup(t, &items));
        let hard_corrections = log_q.map(|t| hard_negatives.iter().map(|row| lookup(t, row)).collect());
        Self { users, items, conditions, hard_negatives, corrections, hard_corrections, alignment_weight }
    }
}

/// Forward activations retained for inspection (kink detection in grad checks).
pub(crate) struct BatchTrace<T> {
    pub preactivations: Vec<T>,
}

/// Total loss (softmax + alignment) and its gradient for one batch.
pub fn batch_loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    config: &TowerConfig,
    batch: &BatchInput,
) -> Result<(f64, ParamGrads<T>)> {
    batch_forward_backward(params, config, batch, true).map(|(l, g, _)| (l, g.unwrap_or_else(|| ParamGrads::zeros_like(params))))
}

pub(crate) fn batch_forward_backward<T: Real>(
    params: &ModelParams<T>,
    config: &TowerConfig,
    batch: &BatchInput,
    with_grads: bool,
) -> Result<(f64, Option<ParamGrads<T>>, BatchTrace<T>)> {
    let topics = params.vocab().topics;
    let mut user_out = Vec::with_capacity(batch.users.len());
    let mut user_cache = Vec::with_capacity(batch.users.len());
    for (&u, &c) in batch.users.iter().zip(&batch.conditions) {
        let (o, cache) = user_tower_forward(u as usize, c, params, config)?;
        user_out.push(o);
        user_cache.push(cache);
    }
    let mut item_out = Vec::with_capacity(batch.items.len());
    let mut item_cache = Vec::with_capacity(batch.items.len());
    for &i in &batch.items {
        let (o, cache) = item_tower_forward(i as usize, params, config)?;
        item_out.push(o);
        item_cache.push(cache);
    }
    let mut extra_out = Vec::with_capacity(batch.hard_negatives.len());
    let mut extra_cache = Vec::with_capacity(batch.hard_negatives.len());
    for row in &batch.hard_negatives {
        let mut outs = Vec::with_capacity(row.len());
        let mut caches = Vec::with_capacity(row.len());
        for &i in row {
            let (o, cache) = item_tower_forward(i as usize, params, config)?;
            outs.push(o);
            caches.push(cache);
        }
        extra_out.push(outs);
        extra_cache.push(caches);
    }

    let softmax = sampled_softmax_loss(
        &user_out,
        &item_out,
        &extra_out,
        batch.corrections.as_deref(),
        batch.hard_corrections.as_deref(),
    )?;
    let mut loss = softmax.loss;

    let mut grad_users = softmax.grad_users;
    let mut align_cond_grads = None;
    if batch.alignment_weight > 0.0 {
        let rows: Vec<usize> = batch.conditions.iter().map(|c| c.row(topics)).collect();
        let targets: Vec<Vec<T>> = rows.iter().map(|&r| params.condition_embedding.row(r).to_vec()).collect();
        let (a_loss, gu, gc) = alignment_loss(&user_out, &targets, batch.alignment_weight)?;
        loss += a_loss;
        for (g, a) in grad_users.iter_mut().zip(gu) {
            for (x, y) in g.iter_mut().zip(a) {
                *x = *x + y;
            }
        }
        align_cond_grads = Some((rows, gc));
    }

    if !with_grads {
        let preactivations = user_cache
            .iter()
            .chain(&item_cache)
            .chain(extra_cache.iter().flatten())
            .flat_map(|c| c.preactivations().copied())
            .collect();
        return Ok((loss, None, BatchTrace { preactivations }));
    }

    let mut grads = ParamGrads::zeros_like(params);
    for (cache, g) in user_cache.iter().zip(&grad_users) {
        tower_backward(cache, g, params, config, &mut grads)?;
    }
    for (cache, g) in item_cache.iter().zip(&softmax.grad_items) {
        tower_backward(cache, g, params, config, &mut grads)?;
    }
    for (caches, gs) in extra_cache.iter().zip(&softmax.grad_extra) {
        for (cache, g) in caches.iter().zip(gs) {
            tower_backward(cache, g, params, config, &mut grads)?;
        }
    }
    if let Some((rows, gc)) = align_cond_grads {
        for (r, g) in rows.into_iter().zip(gc) {
            ParamGrads::add_row(&mut grads.condition_rows, r, &g);
        }
    }
    Ok((loss, Some(grads), BatchTrace { preactivations: Vec::new() }))
}

/// Trains a model from scratch. Deterministic for a fixed `train.seed`.
pub fn train(dataset: &Dataset, tower: &TowerConfig, train: &TrainConfig) -> Result<TrainReport> {
    train.validate(tower)?;
    let started = Instant::now();
    let events = dataset.train_events();
    if events.len() < train.batch_size {
        return Err(Error::config(format!(
            "{} train events cannot fill a batch of {}",
            events.len(),
            train.batch_size
        )));
    }
    let vocab = Vocab::of(dataset);
    let mut params = ModelParams::init(tower, vocab, &mut rng::seeded(train.seed, stream::INIT));
    let mut optimizer = Optimizer::new(train.optimizer, train.learning_rate, &params);
    let log_q = train.logq_correction.then(|| logq_table(&dataset::item_popularity(dataset)));
    let negatives = (train.hard_negatives > 0).then(|| HardNegativeSampler::new(dataset));
    let event_items: Vec<ItemId> = events.iter().map(|e| e.1).collect();
    let mut condition_rng = rng::seeded(train.seed, stream::CONDITIONS);
    let mut negative_rng = rng::seeded(train.seed, stream::HARD_NEGATIVES);
    let mut sampler = ConditionSampler::new(train.resample_per_epoch);

    let mut epoch_losses = Vec::with_capacity(train.epochs);
    let mut batch_losses = Vec::new();
    for epoch in 0..train.epochs {
        let conditions = sampler.conditions(&dataset.items, &event_items, &mut condition_rng).to_vec();
        let batches = dataset::make_batch_indices(events.len(), train.batch_size, rng::derive(train.seed, epoch as u64))?;
        let mut sum = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let pairs: Vec<(UserId, ItemId)> = idx.iter().map(|&k| events[k]).collect();
            let conds: Vec<Condition> = idx.iter().map(|&k| conditions[k]).collect();
            let hard = match &negatives {
                Some(s) => {
                    let rows: Vec<(ItemId, Condition)> = pairs.iter().map(|p| p.1).zip(conds.iter().copied()).collect();
                    sample_hard_negatives(&rows, s, train.hard_negatives, &mut negative_rng)
                }
                None => Vec::new(),
            };
            let input = BatchInput::assemble(&pairs, conds, hard, log_q.as_deref(), train.alignment_weight);
            let (loss, grads) = batch_loss_and_grads(&params, tower, &input)
                .map_err(|e| Error::Numerical(format!("epoch {epoch}, batch {b}: {e}")))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss diverged at epoch {epoch}, batch {b}")));
            }
            optimizer.step(&mut params, &grads);
            sum += loss;
            batch_losses.push(loss);
        }
        let mean = sum / batches.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.5} ({} batches)", batches.len());
        epoch_losses.push(mean);
    }
    if !params.is_finite() {
        return Err(Error::Numerical("parameters became non-finite".into()));
    }
    Ok(TrainReport {
        epoch_losses,
        batch_losses,
        checkpoint: Checkpoint { config: tower.clone(), seed: train.seed, params },
        wall_clock: started.elapsed(),
    })
}
