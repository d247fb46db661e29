use serde::{Deserialize, Serialize};

use crate::tower::{Matrix, ModelParams, ParamGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const EPSILON: f32 = 1e-8;

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }

    fn update(&mut self, offset: usize, params: &mut [f32], grads: &[f32], lr: f32, step: i32) {
        let c1 = 1.0 - BETA1.powi(step);
        let c2 = 1.0 - BETA2.powi(step);
        for (k, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[offset + k];
            let v = &mut self.v[offset + k];
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
        }
    }
}

/// Embedding tables only update rows present in the gradient (with their own
/// Adam step counters); MLP weights update densely every step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    step: i32,
    tables: [(Moments, Vec<i32>); 3],
    mlp: Vec<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f32, params: &ModelParams<f32>) -> Self {
        let table = |m: &Matrix<f32>| (Moments::zeros(m.data.len()), vec![0; m.rows]);
        let mlp = params
            .user_mlp
            .layers
            .iter()
            .chain(&params.item_mlp.layers)
            .flat_map(|l| [Moments::zeros(l.weight.data.len()), Moments::zeros(l.bias.len())])
            .collect();
        Self {
            kind,
            lr: learning_rate,
            step: 0,
            tables: [
                table(&params.user_embedding),
                table(&params.item_embedding),
                table(&params.condition_embedding),
            ],
            mlp,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ParamGrads<f32>) {
        self.step += 1;
        let lr = self.lr;
        let kind = self.kind;
        let sparse = [
            (&grads.user_rows, &mut params.user_embedding),
            (&grads.item_rows, &mut params.item_embedding),
            (&grads.condition_rows, &mut params.condition_embedding),
        ];
        for ((rows, table), (moments, counts)) in sparse.into_iter().zip(self.tables.iter_mut()) {
            let cols = table.cols;
            for (&r, g) in rows {
                let p = table.row_mut(r);
                match kind {
                    OptimizerKind::Sgd => sgd(p, g, lr),
                    OptimizerKind::Adam => {
                        counts[r] += 1;
                        moments.update(r * cols, p, g, lr, counts[r]);
                    }
                }
            }
        }

        let dense_params = params
            .user_mlp
            .layers
            .iter_mut()
            .chain(params.item_mlp.layers.iter_mut())
            .flat_map(|l| [&mut l.weight.data[..], &mut l.bias[..]]);
        let dense_grads = grads
            .user_mlp
            .layers
            .iter()
            .chain(&grads.item_mlp.layers)
            .flat_map(|l| [&l.weight.data[..], &l.bias[..]]);
        for ((p, g), moments) in dense_params.zip(dense_grads).zip(self.mlp.iter_mut()) {
            match kind {
                OptimizerKind::Sgd => sgd(p, g, lr),
                OptimizerKind::Adam => moments.update(0, p, g, lr, self.step),
            }
        }
    }
}

fn sgd(params: &mut [f32], grads: &[f32], lr: f32) {
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::{TowerConfig, Vocab};

    fn setup() -> (ModelParams<f32>, ParamGrads<f32>) {
        let config = TowerConfig { hidden_sizes: vec![], output_dim: 2, embed_dim_user: 2, embed_dim_item: 2, embed_dim_condition: 2, ..TowerConfig::default() };
        let p = ModelParams::<f32>::zeros(&config, Vocab { users: 3, items: 3, topics: 1 });
        let mut g = ParamGrads::zeros_like(&p);
        ParamGrads::add_row(&mut g.user_rows, 1, &[1.0, -2.0]);
        g.item_mlp.layers[0].bias = vec![0.5, 0.0];
        (p, g)
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let (mut p, g) = setup();
        Optimizer::new(OptimizerKind::Sgd, 0.1, &p).step(&mut p, &g);
        assert_eq!(p.user_embedding.row(1), &[-0.1, 0.2]);
        assert_eq!(p.user_embedding.row(0), &[0.0, 0.0]);
        assert_eq!(p.item_mlp.layers[0].bias, vec![-0.05, 0.0]);
    }

    #[test]
    fn first_adam_step_is_lr_times_sign() {
        let (mut p, g) = setup();
        Optimizer::new(OptimizerKind::Adam, 0.01, &p).step(&mut p, &g);
        let r = p.user_embedding.row(1);
        assert!((r[0] + 0.01).abs() < 1e-6 && (r[1] - 0.01).abs() < 1e-6);
        assert_eq!(p.user_embedding.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (mut p, g) = setup();
        let before = p.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0, &p);
        for _ in 0..3 {
            opt.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }
}
