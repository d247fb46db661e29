//! Central finite-difference check of the full training loss.

use rand::Rng;

use super::{batch_forward_backward, batch_loss_and_grads, logq_table, BatchInput, HardNegativeSampler, TrainConfig};
use crate::condition::extract_condition;
use crate::dataset::{self, generate_synthetic, GenConfig};
use crate::error::{Error, Result};
use crate::rng::{self, stream};
use crate::tower::{Activation, ModelParams, TowerConfig, Vocab};

const STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub probes: usize,
    /// Probes discarded because the perturbation crossed a relu kink.
    pub rejected: usize,
}

/// Compares the analytic gradient of the total loss (softmax, hard negatives,
/// logQ, alignment as configured) against central differences on
/// `probe_count` randomly chosen live parameters, in `f64`.
pub fn grad_check(tower: &TowerConfig, train: &TrainConfig, probe_count: usize) -> Result<GradCheck> {
    train.validate(tower)?;
    let data = generate_synthetic(&GenConfig {
        num_users: 6,
        num_items: 12,
        num_topics: 3,
        topics_per_item_range: [0, 2],
        events_per_user: 4,
        affinity_concentration: 1.0,
        noise_rate: 0.2,
        heldout_fraction: 0.0,
        seed: train.seed,
    })?;
    let events = data.train_events();
    let mut rng = rng::seeded(train.seed, stream::GRAD_CHECK);

    let idx = dataset::make_batch_indices(events.len(), train.batch_size, train.seed)?.swap_remove(0);
    let pairs: Vec<_> = idx.iter().map(|&k| events[k]).collect();
    let conditions: Vec<_> = pairs.iter().map(|p| extract_condition(&data.items[p.1 as usize], &mut rng)).collect();
    let hard = if train.hard_negatives > 0 {
        let sampler = HardNegativeSampler::new(&data);
        pairs
            .iter()
            .zip(&conditions)
            .map(|(p, &c)| sampler.sample(p.1, c, train.hard_negatives, &mut rng))
            .collect()
    } else {
        Vec::new()
    };
    let log_q = train.logq_correction.then(|| logq_table(&dataset::item_popularity(&data)));
    let batch = BatchInput::assemble(&pairs, conditions, hard, log_q.as_deref(), train.alignment_weight);

    // Start from the usual init, then widen embeddings and biases so that the
    // crossing layers operate well away from zero.
    let mut params = ModelParams::init(tower, Vocab::of(&data), &mut rng).cast::<f64>();
    for table in [&mut params.user_embedding, &mut params.item_embedding, &mut params.condition_embedding] {
        table.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    }
    for mlp in [&mut params.user_mlp, &mut params.item_mlp] {
        for l in &mut mlp.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
    }

    let (_, grads) = batch_loss_and_grads(&params, tower, &batch)?;
    let analytic = grads.to_dense(&params);

    // Live parameters: referenced embedding rows and every MLP weight.
    let mut live: Vec<(usize, usize)> = Vec::new();
    for (t, (rows, cols)) in [
        (0, (&grads.user_rows, params.user_embedding.cols)),
        (1, (&grads.item_rows, params.item_embedding.cols)),
        (2, (&grads.condition_rows, params.condition_embedding.cols)),
    ] {
        for &r in rows.keys() {
            live.extend((0..cols).map(|c| (t, r * cols + c)));
        }
    }
    for (t, tensor) in params.tensors().iter().enumerate().skip(3) {
        live.extend((0..tensor.len()).map(|k| (t, k)));
    }
    if live.is_empty() {
        return Err(Error::Contract("no live parameters to probe".into()));
    }

    let kinked = tower.activation == Activation::Relu && !tower.hidden_sizes.is_empty();
    let pattern = |p: &ModelParams<f64>| -> Result<(f64, Vec<bool>)> {
        let (loss, _, trace) = batch_forward_backward(p, tower, &batch, false)?;
        Ok((loss, trace.preactivations.iter().map(|&z| z > 0.0).collect()))
    };
    let (_, base_pattern) = pattern(&params)?;

    let mut max_rel: f64 = 0.0;
    let mut probes = 0;
    let mut rejected = 0;
    let max_attempts = probe_count.saturating_mul(20).max(100);
    for _ in 0..max_attempts {
        if probes == probe_count {
            break;
        }
        let (t, k) = live[rng.random_range(0..live.len())];
        let mut plus = params.clone();
        plus.tensors_mut()[t][k] += STEP;
        let mut minus = params.clone();
        minus.tensors_mut()[t][k] -= STEP;
        let (lp, pp) = pattern(&plus)?;
        let (lm, pm) = pattern(&minus)?;
        if kinked && (pp != base_pattern || pm != base_pattern) {
            rejected += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * STEP);
        let a = analytic.tensors()[t][k];
        let scale = a.abs().max(numeric.abs());
        let rel = if scale < 1e-10 { 0.0 } else { (a - numeric).abs() / scale };
        max_rel = max_rel.max(rel);
        probes += 1;
    }
    Ok(GradCheck { max_relative_error: max_rel, probes, rejected })
}
