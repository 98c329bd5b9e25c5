use serde::{Deserialize, Serialize};

use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
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

/// First-order optimizer over a flat parameter buffer.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam { .. } => (vec![T::zero(); len], vec![T::zero(); len]),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self { kind, lr, step: 0, m, v }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), grads.len(), "optimizer: gradient length");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::lit(self.lr);
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p = *p - lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let c1 = T::lit(1.0 - beta1.powi(t));
                let c2 = T::lit(1.0 - beta2.powi(t));
                let (lr, eps) = (T::lit(self.lr), T::lit(eps));
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
                    self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] = params[i] - lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0f64, -2.0];
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.1, 2);
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.update(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    #[test]
    fn first_adam_step_has_lr_magnitude() {
        let mut x = vec![1.0f64];
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.01, 1);
        opt.update(&mut x, &[123.0]);
        assert!((x[0] - 0.99).abs() < 1e-9);
    }
}
