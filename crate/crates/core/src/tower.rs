//! Two-tower network: ID embedding tables followed by MLP crossing layers.
//!
//! The conditional user tower concatenates a condition embedding onto the
//! user embedding before the crossing layers. Everything here is generic over
//! [`Real`] so that gradient checks can run the exact same code in `f64`;
//! trained models use `f32`.

mod checkpoint;

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::iter::Sum;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::condition::Condition;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

pub trait Real: num_traits::Float + Debug + Default + Sum + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TowerConfig {
    pub embed_dim_user: usize,
    pub embed_dim_item: usize,
    pub embed_dim_condition: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    /// false: plain two-tower (LR); true: conditional user tower (CR).
    pub conditional: bool,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self {
            embed_dim_user: 32,
            embed_dim_item: 32,
            embed_dim_condition: 32,
            hidden_sizes: vec![64],
            output_dim: 32,
            activation: Activation::Relu,
            conditional: true,
        }
    }
}

impl TowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim_user == 0 || self.embed_dim_item == 0 || self.output_dim == 0 {
            return Err(Error::config("embedding and output dimensions must be positive"));
        }
        if self.conditional && self.embed_dim_condition == 0 {
            return Err(Error::config("embed_dim_condition must be positive for a conditional tower"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// Width of the condition columns actually present in the parameters.
    pub fn condition_width(&self) -> usize {
        if self.conditional {
            self.embed_dim_condition
        } else {
            0
        }
    }

    pub fn user_input_dim(&self) -> usize {
        self.embed_dim_user + self.condition_width()
    }

    fn layer_shapes(&self, input: usize) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_sizes.len() + 1);
        let mut fan_in = input;
        for &h in &self.hidden_sizes {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes.push((self.output_dim, fan_in));
        shapes
    }
}

/// Table sizes a model is built against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub users: usize,
    pub items: usize,
    pub topics: u32,
}

impl Vocab {
    pub fn of(dataset: &crate::dataset::Dataset) -> Self {
        Self { users: dataset.num_users(), items: dataset.num_items(), topics: dataset.topic_count }
    }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect() }
    }
}

/// Fully connected layer, `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Mlp<T> {
    fn zeros(shapes: &[(usize, usize)]) -> Self {
        Self {
            layers: shapes
                .iter()
                .map(|&(o, i)| Dense { weight: Matrix::zeros(o, i), bias: vec![T::zero(); o] })
                .collect(),
        }
    }

    fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.cols)
    }

    fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.rows)
    }

    fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense { weight: l.weight.cast(), bias: l.bias.iter().map(|b| U::from_f64(b.as_f64())).collect() })
                .collect(),
        }
    }

    fn forward(&self, input: Vec<T>, activation: Activation) -> (Vec<T>, MlpCache<T>) {
        let hidden = self.layers.len() - 1;
        let mut cache = MlpCache { input, pre: Vec::with_capacity(hidden), post: Vec::with_capacity(hidden) };
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let x = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let z = affine(layer, x);
            if l < hidden {
                let a = z.iter().map(|&v| activate(v, activation)).collect();
                cache.pre.push(z);
                cache.post.push(a);
            } else {
                out = z;
            }
        }
        (out, cache)
    }

    /// Accumulates into `grads` and returns the gradient w.r.t. the input.
    fn backward(&self, cache: &MlpCache<T>, upstream: &[T], activation: Activation, grads: &mut Mlp<T>) -> Vec<T> {
        let mut g = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            let gl = &mut grads.layers[l];
            for (o, &go) in g.iter().enumerate() {
                if go == T::zero() {
                    continue;
                }
                gl.bias[o] = gl.bias[o] + go;
                for (w, &xi) in gl.weight.row_mut(o).iter_mut().zip(x) {
                    *w = *w + go * xi;
                }
            }
            let mut gx = vec![T::zero(); layer.weight.cols];
            for (o, &go) in g.iter().enumerate() {
                if go == T::zero() {
                    continue;
                }
                for (gxi, &w) in gx.iter_mut().zip(layer.weight.row(o)) {
                    *gxi = *gxi + go * w;
                }
            }
            if l > 0 {
                let pre = &cache.pre[l - 1];
                let post = &cache.post[l - 1];
                for ((gi, &z), &a) in gx.iter_mut().zip(pre).zip(post) {
                    *gi = *gi * activate_grad(z, a, activation);
                }
            }
            g = gx;
        }
        g
    }
}

fn affine<T: Real>(layer: &Dense<T>, x: &[T]) -> Vec<T> {
    (0..layer.weight.rows)
        .map(|o| dot(layer.weight.row(o), x) + layer.bias[o])
        .collect()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn activate<T: Real>(z: T, activation: Activation) -> T {
    match activation {
        Activation::Relu => z.max(T::zero()),
        Activation::Tanh => z.tanh(),
    }
}

fn activate_grad<T: Real>(z: T, a: T, activation: Activation) -> T {
    match activation {
        Activation::Relu => {
            if z > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Tanh => T::one() - a * a,
    }
}

/// All trainable state of a two-tower model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub user_embedding: Matrix<T>,
    pub item_embedding: Matrix<T>,
    /// `(T + 1)` rows; zero columns for the unconditioned tower.
    pub condition_embedding: Matrix<T>,
    pub user_mlp: Mlp<T>,
    pub item_mlp: Mlp<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(config: &TowerConfig, vocab: Vocab) -> Self {
        Self {
            user_embedding: Matrix::zeros(vocab.users, config.embed_dim_user),
            item_embedding: Matrix::zeros(vocab.items, config.embed_dim_item),
            condition_embedding: Matrix::zeros(vocab.topics as usize + 1, config.condition_width()),
            user_mlp: Mlp::zeros(&config.layer_shapes(config.user_input_dim())),
            item_mlp: Mlp::zeros(&config.layer_shapes(config.embed_dim_item)),
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            user_embedding: self.user_embedding.cast(),
            item_embedding: self.item_embedding.cast(),
            condition_embedding: self.condition_embedding.cast(),
            user_mlp: self.user_mlp.cast(),
            item_mlp: self.item_mlp.cast(),
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab {
            users: self.user_embedding.rows,
            items: self.item_embedding.rows,
            topics: (self.condition_embedding.rows - 1) as u32,
        }
    }

    /// Every parameter tensor in a fixed order: user, item, condition tables,
    /// then (weight, bias) per user-tower layer, then per item-tower layer.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![
            &self.user_embedding.data,
            &self.item_embedding.data,
            &self.condition_embedding.data,
        ];
        for mlp in [&self.user_mlp, &self.item_mlp] {
            for l in &mlp.layers {
                out.push(&l.weight.data);
                out.push(&l.bias);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![
            &mut self.user_embedding.data,
            &mut self.item_embedding.data,
            &mut self.condition_embedding.data,
        ];
        for mlp in [&mut self.user_mlp, &mut self.item_mlp] {
            for l in &mut mlp.layers {
                out.push(&mut l.weight.data);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check(&self, config: &TowerConfig) -> Result<()> {
        if self.user_mlp.input_dim() != config.user_input_dim()
            || self.item_mlp.input_dim() != config.embed_dim_item
            || self.user_mlp.output_dim() != config.output_dim
            || self.item_mlp.output_dim() != config.output_dim
        {
            return Err(Error::Contract("parameters do not match tower configuration".into()));
        }
        Ok(())
    }
}

impl ModelParams<f32> {
    /// Embeddings uniform in ±0.05; weights uniform with variance `1/fan_in`;
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(config: &TowerConfig, vocab: Vocab, rng: &mut R) -> Self {
        let mut p = Self::zeros(config, vocab);
        for table in [&mut p.user_embedding, &mut p.item_embedding, &mut p.condition_embedding] {
            table.data.iter_mut().for_each(|x| *x = rng.random_range(-0.05f32..0.05));
        }
        for mlp in [&mut p.user_mlp, &mut p.item_mlp] {
            for l in &mut mlp.layers {
                let bound = (3.0 / l.weight.cols as f32).sqrt();
                l.weight.data.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
            }
        }
        p
    }
}

/// Activations retained by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    input: Vec<T>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TowerInput {
    User { user: usize, condition_row: Option<usize> },
    Item { item: usize },
}

#[derive(Debug, Clone)]
pub struct TowerCache<T> {
    pub input: TowerInput,
    mlp: MlpCache<T>,
}

impl<T> TowerCache<T> {
    /// Pre-activations of every hidden layer; used to spot activation kinks.
    pub fn preactivations(&self) -> impl Iterator<Item = &T> {
        self.mlp.pre.iter().flatten()
    }
}

fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index >= size {
        return Err(Error::OutOfRange { what, index, size });
    }
    Ok(())
}

pub fn user_tower_forward<T: Real>(
    user: usize,
    condition: Condition,
    params: &ModelParams<T>,
    config: &TowerConfig,
) -> Result<(Vec<T>, TowerCache<T>)> {
    params.check(config)?;
    check_index("user", user, params.user_embedding.rows)?;
    let mut input = Vec::with_capacity(config.user_input_dim());
    input.extend_from_slice(params.user_embedding.row(user));
    let condition_row = if config.conditional {
        let topics = params.vocab().topics;
        if let Condition::Topic(t) = condition {
            check_index("topic", t as usize, topics as usize)?;
        }
        let row = condition.row(topics);
        input.extend_from_slice(params.condition_embedding.row(row));
        Some(row)
    } else {
        None
    };
    let (out, mlp) = params.user_mlp.forward(input, config.activation);
    Ok((out, TowerCache { input: TowerInput::User { user, condition_row }, mlp }))
}

pub fn item_tower_forward<T: Real>(
    item: usize,
    params: &ModelParams<T>,
    config: &TowerConfig,
) -> Result<(Vec<T>, TowerCache<T>)> {
    params.check(config)?;
    check_index("item", item, params.item_embedding.rows)?;
    let input = params.item_embedding.row(item).to_vec();
    let (out, mlp) = params.item_mlp.forward(input, config.activation);
    Ok((out, TowerCache { input: TowerInput::Item { item }, mlp }))
}

/// Dot-product similarity.
pub fn score<T: Real>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::Dimension { expected: u.len(), actual: v.len() });
    }
    Ok(dot(u, v))
}

/// Gradient with the same layout as [`ModelParams`]; embedding tables are
/// sparse (only referenced rows are present).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub user_rows: BTreeMap<usize, Vec<T>>,
    pub item_rows: BTreeMap<usize, Vec<T>>,
    pub condition_rows: BTreeMap<usize, Vec<T>>,
    pub user_mlp: Mlp<T>,
    pub item_mlp: Mlp<T>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        let shapes = |m: &Mlp<T>| -> Vec<(usize, usize)> {
            m.layers.iter().map(|l| (l.weight.rows, l.weight.cols)).collect()
        };
        Self {
            user_rows: BTreeMap::new(),
            item_rows: BTreeMap::new(),
            condition_rows: BTreeMap::new(),
            user_mlp: Mlp::zeros(&shapes(&params.user_mlp)),
            item_mlp: Mlp::zeros(&shapes(&params.item_mlp)),
        }
    }

    pub fn add_row(table: &mut BTreeMap<usize, Vec<T>>, row: usize, grad: &[T]) {
        let entry = table.entry(row).or_insert_with(|| vec![T::zero(); grad.len()]);
        for (e, &g) in entry.iter_mut().zip(grad) {
            *e = *e + g;
        }
    }

    /// Densifies into a [`ModelParams`]-shaped structure.
    pub fn to_dense(&self, like: &ModelParams<T>) -> ModelParams<T> {
        let mut out = ModelParams {
            user_embedding: Matrix::zeros(like.user_embedding.rows, like.user_embedding.cols),
            item_embedding: Matrix::zeros(like.item_embedding.rows, like.item_embedding.cols),
            condition_embedding: Matrix::zeros(like.condition_embedding.rows, like.condition_embedding.cols),
            user_mlp: self.user_mlp.clone(),
            item_mlp: self.item_mlp.clone(),
        };
        for (rows, table) in [
            (&self.user_rows, &mut out.user_embedding),
            (&self.item_rows, &mut out.item_embedding),
            (&self.condition_rows, &mut out.condition_embedding),
        ] {
            for (&r, g) in rows {
                table.row_mut(r).copy_from_slice(g);
            }
        }
        out
    }
}

/// Back-propagates `upstream` (gradient w.r.t. the tower output) through the
/// tower that produced `cache`, accumulating into `grads`.
pub fn tower_backward<T: Real>(
    cache: &TowerCache<T>,
    upstream: &[T],
    params: &ModelParams<T>,
    config: &TowerConfig,
    grads: &mut ParamGrads<T>,
) -> Result<()> {
    if upstream.len() != config.output_dim {
        return Err(Error::Dimension { expected: config.output_dim, actual: upstream.len() });
    }
    match cache.input {
        TowerInput::User { user, condition_row } => {
            if cache.mlp.input.len() != params.user_mlp.input_dim() || condition_row.is_some() != config.conditional {
                return Err(Error::Contract("user-tower cache does not match these parameters".into()));
            }
            let gx = params.user_mlp.backward(&cache.mlp, upstream, config.activation, &mut grads.user_mlp);
            let (gu, gc) = gx.split_at(config.embed_dim_user);
            ParamGrads::add_row(&mut grads.user_rows, user, gu);
            if let Some(row) = condition_row {
                ParamGrads::add_row(&mut grads.condition_rows, row, gc);
            }
        }
        TowerInput::Item { item } => {
            if cache.mlp.input.len() != params.item_mlp.input_dim() {
                return Err(Error::Contract("item-tower cache does not match these parameters".into()));
            }
            let gx = params.item_mlp.backward(&cache.mlp, upstream, config.activation, &mut grads.item_mlp);
            ParamGrads::add_row(&mut grads.item_rows, item, &gx);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn vocab() -> Vocab {
        Vocab { users: 5, items: 7, topics: 3 }
    }

    fn cfg(hidden: &[usize], activation: Activation, conditional: bool) -> TowerConfig {
        TowerConfig {
            embed_dim_user: 4,
            embed_dim_item: 3,
            embed_dim_condition: 2,
            hidden_sizes: hidden.to_vec(),
            output_dim: 3,
            activation,
            conditional,
        }
    }

    fn random_params(config: &TowerConfig, seed: u64) -> ModelParams<f64> {
        let mut p = ModelParams::<f32>::init(config, vocab(), &mut seeded(seed, 0)).cast::<f64>();
        // larger biases so the check is not dominated by near-zero activations
        let mut rng = seeded(seed, 1);
        for mlp in [&mut p.user_mlp, &mut p.item_mlp] {
            for l in &mut mlp.layers {
                l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
        }
        for t in [&mut p.user_embedding, &mut p.item_embedding, &mut p.condition_embedding] {
            t.data.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        p
    }

    #[test]
    fn zero_params_give_zero_output() {
        let c = cfg(&[5], Activation::Relu, true);
        let p = ModelParams::<f32>::zeros(&c, vocab());
        let (u, _) = user_tower_forward(2, Condition::Topic(1), &p, &c).unwrap();
        let (v, _) = item_tower_forward(3, &p, &c).unwrap();
        assert_eq!(u, vec![0.0; 3]);
        assert_eq!(v, vec![0.0; 3]);
    }

    #[test]
    fn out_of_range_ids_error() {
        let c = cfg(&[], Activation::Relu, true);
        let p = ModelParams::<f32>::zeros(&c, vocab());
        assert!(matches!(user_tower_forward(5, Condition::Null, &p, &c), Err(Error::OutOfRange { .. })));
        assert!(matches!(item_tower_forward(7, &p, &c), Err(Error::OutOfRange { .. })));
        assert!(matches!(user_tower_forward(0, Condition::Topic(3), &p, &c), Err(Error::OutOfRange { .. })));
        // null condition is the last valid row
        assert!(user_tower_forward(0, Condition::Null, &p, &c).is_ok());
    }

    #[test]
    fn conditions_change_conditional_output() {
        let c = cfg(&[6], Activation::Tanh, true);
        let p = random_params(&c, 3);
        let (a, _) = user_tower_forward(1, Condition::Topic(0), &p, &c).unwrap();
        let (b, _) = user_tower_forward(1, Condition::Topic(2), &p, &c).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
        let lr = cfg(&[6], Activation::Tanh, false);
        let p = random_params(&lr, 3);
        let (a, _) = user_tower_forward(1, Condition::Topic(0), &p, &lr).unwrap();
        let (b, _) = user_tower_forward(1, Condition::Topic(2), &p, &lr).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_output_layer_copies_user_embedding() {
        let c = TowerConfig { output_dim: 3, ..cfg(&[], Activation::Relu, true) };
        let mut p = random_params(&c, 4);
        let w = &mut p.user_mlp.layers[0].weight;
        w.data.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..3 {
            w.data[k * w.cols + k] = 1.0;
        }
        p.user_mlp.layers[0].bias.iter_mut().for_each(|b| *b = 0.0);
        let (u, _) = user_tower_forward(2, Condition::Topic(1), &p, &c).unwrap();
        assert_eq!(u, p.user_embedding.row(2)[..3].to_vec());
    }

    #[test]
    fn item_forward_is_pure_and_local() {
        let c = cfg(&[4], Activation::Relu, false);
        let mut p = random_params(&c, 5);
        let before: Vec<_> = (0..7).map(|i| item_tower_forward(i, &p, &c).unwrap().0).collect();
        assert_eq!(before[2], item_tower_forward(2, &p, &c).unwrap().0);
        p.item_embedding.row_mut(4).iter_mut().for_each(|x| *x += 0.3);
        for i in 0..7 {
            let after = item_tower_forward(i, &p, &c).unwrap().0;
            assert_eq!(after == before[i], i != 4, "item {i}");
        }
    }

    #[test]
    fn score_examples() {
        assert_eq!(score(&[1.0f32, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score(&[1.0f32, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert!(matches!(score(&[1.0f32], &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn param_count_difference_between_cr_and_lr() {
        for hidden in [vec![], vec![5, 4]] {
            let cr = cfg(&hidden, Activation::Relu, true);
            let lr = cfg(&hidden, Activation::Relu, false);
            let first = hidden.first().copied().unwrap_or(cr.output_dim);
            let diff = ModelParams::<f32>::zeros(&cr, vocab()).param_count()
                - ModelParams::<f32>::zeros(&lr, vocab()).param_count();
            let ec = cr.embed_dim_condition;
            assert_eq!(diff, (vocab().topics as usize + 1) * ec + ec * first);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let c = cfg(&[5], Activation::Tanh, true);
        let p = random_params(&c, 6);
        let (_, cache) = user_tower_forward(1, Condition::Topic(2), &p, &c).unwrap();
        let mut g = ParamGrads::zeros_like(&p);
        tower_backward(&cache, &[0.0; 3], &p, &c, &mut g).unwrap();
        let dense = g.to_dense(&p);
        assert!(dense.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn linear_layer_weight_grad_is_outer_product() {
        let c = cfg(&[], Activation::Relu, false);
        let p = random_params(&c, 7);
        let (_, cache) = item_tower_forward(3, &p, &c).unwrap();
        let upstream = [0.5, -1.0, 2.0];
        let mut g = ParamGrads::zeros_like(&p);
        tower_backward(&cache, &upstream, &p, &c, &mut g).unwrap();
        let x = p.item_embedding.row(3);
        let w = &g.item_mlp.layers[0].weight;
        for o in 0..3 {
            for i in 0..3 {
                assert_eq!(w.data[o * w.cols + i], upstream[o] * x[i]);
            }
        }
        assert_eq!(g.item_mlp.layers[0].bias, upstream.to_vec());
        assert_eq!(g.item_rows.keys().copied().collect::<Vec<_>>(), vec![3]);
        assert!(g.user_rows.is_empty());
    }

    #[test]
    fn mismatched_cache_is_a_contract_violation() {
        let cr = cfg(&[5], Activation::Relu, true);
        let lr = cfg(&[5], Activation::Relu, false);
        let p_cr = random_params(&cr, 8);
        let p_lr = random_params(&lr, 8);
        let (_, cache) = user_tower_forward(0, Condition::Topic(0), &p_cr, &cr).unwrap();
        let mut g = ParamGrads::zeros_like(&p_lr);
        assert!(matches!(tower_backward(&cache, &[1.0; 3], &p_lr, &lr, &mut g), Err(Error::Contract(_))));
    }

    /// Central finite differences on `sum(w ⊙ output)` for every parameter.
    fn finite_difference_check(c: &TowerConfig, seed: u64) {
        let p = random_params(c, seed);
        let w = [0.7, -1.3, 0.4];
        let objective = |p: &ModelParams<f64>| -> f64 {
            let (u, _) = user_tower_forward(2, Condition::Topic(1), p, c).unwrap();
            let (v, _) = item_tower_forward(5, p, c).unwrap();
            u.iter().chain(&v).zip(w.iter().chain(&w)).map(|(a, b)| a * b).sum()
        };
        let mut g = ParamGrads::zeros_like(&p);
        let (_, cu) = user_tower_forward(2, Condition::Topic(1), &p, c).unwrap();
        let (_, ci) = item_tower_forward(5, &p, c).unwrap();
        tower_backward(&cu, &w, &p, c, &mut g).unwrap();
        tower_backward(&ci, &w, &p, c, &mut g).unwrap();
        let analytic = g.to_dense(&p);
        let eps = 1e-3;
        let n_tensors = p.tensors().len();
        let mut max_rel: f64 = 0.0;
        for t in 0..n_tensors {
            for k in 0..p.tensors()[t].len() {
                let mut plus = p.clone();
                plus.tensors_mut()[t][k] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[t][k] -= eps;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let a = analytic.tensors()[t][k];
                let scale = a.abs().max(numeric.abs());
                if scale > 1e-7 {
                    max_rel = max_rel.max((a - numeric).abs() / scale);
                } else {
                    assert!((a - numeric).abs() < 1e-9);
                }
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel} for {c:?}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        for conditional in [true, false] {
            finite_difference_check(&cfg(&[5, 4], Activation::Tanh, conditional), 10);
            finite_difference_check(&cfg(&[], Activation::Relu, conditional), 11);
        }
    }
}
