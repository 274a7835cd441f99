use serde::{Deserialize, Serialize};

use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state sized to one parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let moments = if matches!(kind, OptimizerKind::Adam { .. }) { n_params } else { 0 };
        Optimizer {
            kind,
            lr,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    /// One update from the store's gradient buffer.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let grad = store.grad().to_vec();
        let vals = store.values_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for (x, g) in vals.iter_mut().zip(&grad) {
                    *x -= self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (k, (x, g)) in vals.iter_mut().zip(&grad).enumerate() {
                    self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
                    self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
                    let mh = self.m[k] / c1;
                    let vh = self.v[k] / c2;
                    *x -= self.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}
