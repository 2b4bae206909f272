use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state owned by a single parameter group.
///
/// State tensors are allocated lazily on the first update, so a group that is
/// never stepped keeps an empty state.
#[derive(Debug, Clone)]
pub struct GroupOptimizer<R: Real> {
    kind: OptimizerKind,
    lr: f64,
    steps: u64,
    first: Vec<Array2<R>>,
    second: Vec<Array2<R>>,
}

impl<R: Real> GroupOptimizer<R> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Moment tensors, in parameter order (empty before the first step).
    pub fn state(&self) -> impl Iterator<Item = &Array2<R>> {
        self.first.iter().chain(self.second.iter())
    }

    pub fn step(&mut self, params: Vec<&mut Array2<R>>, grads: Vec<&Array2<R>>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient arity");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.second = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
        }
        self.steps += 1;
        let lr = R::lit(self.lr);
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = R::lit(1.0 - beta1.powi(t));
                let c2 = R::lit(1.0 - beta2.powi(t));
                let (b1, b2, eps) = (R::lit(beta1), R::lit(beta2), R::lit(eps));
                let (one, zero) = (R::one(), R::zero());
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let denom = (*v / c2).sqrt() + eps;
                        let update = lr * (*m / c1) / denom;
                        if update != zero {
                            *p -= update;
                        }
                    });
                }
            }
            OptimizerKind::SgdMomentum { momentum } => {
                let mu = R::lit(momentum);
                for ((p, g), m) in params.into_iter().zip(grads).zip(self.first.iter_mut()) {
                    Zip::from(p).and(g).and(m).for_each(|p, &g, m| {
                        *m = mu * *m + g;
                        *p -= lr * *m;
                    });
                }
            }
        }
    }
}
