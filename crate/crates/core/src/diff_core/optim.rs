//! First-order parameter updates: plain gradient descent, or Adam behind a
//! config switch.

use serde::{Deserialize, Serialize};

use super::mlp::{GradientRecord, MlpParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Returns the Adam direction for the flat gradient `g`.
    fn direction(&mut self, g: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        g.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&gi, (m, v))| {
                *m = BETA1 * *m + (1.0 - BETA1) * gi;
                *v = BETA2 * *v + (1.0 - BETA2) * gi * gi;
                (*m / c1) / ((*v / c2).sqrt() + EPS)
            })
            .collect()
    }
}

/// Optimizer state for one network.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    moments: Option<Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            moments: None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, params: &mut MlpParams, grad: &GradientRecord) {
        match self.kind {
            OptimizerKind::Sgd => params.apply_gradient(grad, self.lr),
            OptimizerKind::Adam => {
                let flat = grad.to_flat();
                let moments = self
                    .moments
                    .get_or_insert_with(|| Moments::new(flat.len()));
                let dir = moments.direction(&flat);
                let mut theta = params.to_flat();
                for (p, d) in theta.iter_mut().zip(&dir) {
                    *p -= self.lr * d;
                }
                params
                    .set_flat(&theta)
                    .expect("gradient layout mirrors the parameters");
            }
        }
    }
}

/// The same update rules for a single scalar parameter.
#[derive(Clone, Debug)]
pub struct ScalarOptimizer {
    kind: OptimizerKind,
    lr: f64,
    moments: Moments,
}

impl ScalarOptimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            moments: Moments::new(1),
        }
    }

    pub fn step(&mut self, value: &mut f64, grad: f64) {
        match self.kind {
            OptimizerKind::Sgd => *value -= self.lr * grad,
            OptimizerKind::Adam => *value -= self.lr * self.moments.direction(&[grad])[0],
        }
    }
}
