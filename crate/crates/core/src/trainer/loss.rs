//! Sampled softmax over in-batch (and optional per-row extra) negatives, and
//! the condition-alignment penalty. Reductions run in `f64`.

use crate::error::{Error, Result};
use crate::tower::Real;

#[derive(Debug, Clone)]
pub struct SoftmaxOutput<T> {
    pub loss: f64,
    pub grad_users: Vec<Vec<T>>,
    pub grad_items: Vec<Vec<T>>,
    /// Per row, gradient for each of that row's extra negatives.
    pub grad_extra: Vec<Vec<Vec<T>>>,
}

/// `(loss, gradient for the first operand, gradient for the second)`.
pub type LossAndGrads<T> = (f64, Vec<Vec<T>>, Vec<Vec<T>>);

fn check_dims<T>(rows: &[Vec<T>], dim: usize, what: &str) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Contract(format!("{what} row {i} has dim {}, expected {dim}", r.len())));
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// In-batch sampled softmax: row `i` scores user `i` against every batch
/// item (positive at column `i`) plus `extra[i]`. Logits are
/// `score − correction`; loss is the mean negative log-likelihood of the
/// positive column.
pub fn sampled_softmax_loss<T: Real>(
    users: &[Vec<T>],
    items: &[Vec<T>],
    extra: &[Vec<Vec<T>>],
    corrections: Option<&[f64]>,
    extra_corrections: Option<&[Vec<f64>]>,
) -> Result<SoftmaxOutput<T>> {
    let b = users.len();
    if b == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    if items.len() != b {
        return Err(Error::Contract(format!("{b} users but {} items", items.len())));
    }
    let d = users[0].len();
    if d == 0 {
        return Err(Error::Contract("zero-dimensional embeddings".into()));
    }
    check_dims(users, d, "user")?;
    check_dims(items, d, "item")?;
    if !extra.is_empty() && extra.len() != b {
        return Err(Error::Contract(format!("extra negatives for {} rows, batch has {b}", extra.len())));
    }
    for row in extra {
        check_dims(row, d, "extra negative")?;
    }
    if let Some(c) = corrections {
        if c.len() != b {
            return Err(Error::Contract("one correction per batch item required".into()));
        }
    }

    let scale = 1.0 / b as f64;
    let flat = |rows: &[Vec<T>]| rows.iter().flatten().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let users64 = flat(users);
    let items64 = flat(items);
    let mut loss = 0.0;
    let mut grad_users = Vec::with_capacity(b);
    let mut grad_items_64 = vec![0.0f64; b * d];
    let mut grad_extra = Vec::with_capacity(extra.len());
    let mut logits = Vec::with_capacity(b);

    for (i, u) in users64.chunks_exact(d).enumerate() {
        let row_extra: &[Vec<T>] = extra.get(i).map_or(&[], |r| r.as_slice());
        let extra64 = flat(row_extra);
        logits.clear();
        for (j, item) in items64.chunks_exact(d).enumerate() {
            logits.push(dot(u, item) - corrections.map_or(0.0, |c| c[j]));
        }
        for (h, x) in extra64.chunks_exact(d).enumerate() {
            let corr = extra_corrections.and_then(|c| c.get(i)).and_then(|c| c.get(h)).copied().unwrap_or(0.0);
            logits.push(dot(u, x) - corr);
        }
        if let Some(j) = logits.iter().position(|l| !l.is_finite()) {
            return Err(Error::Numerical(format!("non-finite logit at row {i}, column {j}")));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let positive = logits[i] - max;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
        }
        let sum_exp: f64 = logits.iter().sum();
        loss -= positive - sum_exp.ln();

        // d loss / d logit = (softmax − onehot) / B
        let norm = scale / sum_exp;
        let mut gu = vec![0.0f64; d];
        for (j, (item, gi)) in items64.chunks_exact(d).zip(grad_items_64.chunks_exact_mut(d)).enumerate() {
            let g = logits[j] * norm - if j == i { scale } else { 0.0 };
            axpy(&mut gu, g, item);
            axpy(gi, g, u);
        }
        let mut ge_row = Vec::with_capacity(row_extra.len());
        for (h, x) in extra64.chunks_exact(d).enumerate() {
            let g = logits[b + h] * norm;
            axpy(&mut gu, g, x);
            ge_row.push(u.iter().map(|&v| T::from_f64(g * v)).collect());
        }
        if !extra.is_empty() {
            grad_extra.push(ge_row);
        }
        grad_users.push(gu.into_iter().map(T::from_f64).collect());
    }

    Ok(SoftmaxOutput {
        loss: loss * scale,
        grad_users,
        grad_items: grad_items_64.chunks_exact(d).map(|r| r.iter().map(|&x| T::from_f64(x)).collect()).collect(),
        grad_extra,
    })
}

/// Plain in-batch softmax: `(loss, grad_users, grad_items)`.
pub fn inbatch_softmax_loss<T: Real>(
    users: &[Vec<T>],
    items: &[Vec<T>],
    corrections: Option<&[f64]>,
) -> Result<LossAndGrads<T>> {
    let out = sampled_softmax_loss(users, items, &[], corrections, None)?;
    Ok((out.loss, out.grad_users, out.grad_items))
}

/// `weight · mean_i ‖u_i − c_i‖²`, returning `(loss, grad_users, grad_conditions)`.
pub fn alignment_loss<T: Real>(
    users: &[Vec<T>],
    conditions: &[Vec<T>],
    weight: f64,
) -> Result<LossAndGrads<T>> {
    if users.len() != conditions.len() {
        return Err(Error::Contract(format!("{} users but {} conditions", users.len(), conditions.len())));
    }
    let zeros = |rows: &[Vec<T>]| rows.iter().map(|r| vec![T::zero(); r.len()]).collect::<Vec<_>>();
    if weight == 0.0 || users.is_empty() {
        return Ok((0.0, zeros(users), zeros(conditions)));
    }
    let scale = weight / users.len() as f64;
    let mut loss = 0.0;
    let mut gu = Vec::with_capacity(users.len());
    let mut gc = Vec::with_capacity(users.len());
    for (u, c) in users.iter().zip(conditions) {
        if u.len() != c.len() {
            return Err(Error::config(format!(
                "alignment loss needs embed_dim_condition == output_dim ({} != {})",
                c.len(),
                u.len()
            )));
        }
        let diff: Vec<f64> = u.iter().zip(c).map(|(&a, &b)| a.as_f64() - b.as_f64()).collect();
        loss += diff.iter().map(|x| x * x).sum::<f64>();
        gu.push(diff.iter().map(|&x| T::from_f64(2.0 * scale * x)).collect());
        gc.push(diff.iter().map(|&x| T::from_f64(-2.0 * scale * x)).collect());
    }
    Ok((loss * scale, gu, gc))
}
