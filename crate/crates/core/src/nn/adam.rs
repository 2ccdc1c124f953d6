use crate::autodiff::Grads;
use crate::tensor::Tensor;

use super::{Bound, ParamStore};

/// Adam with bias correction and optional global-norm clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: Some(5.0),
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients of the bound parameters.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, bound: &Bound, grads: &Grads) {
        self.step += 1;
        let clip = match self.max_grad_norm {
            Some(max) => {
                let sq: f64 = bound
                    .vars()
                    .iter()
                    .filter_map(|&v| grads.get(v))
                    .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
                    .sum();
                let norm = sq.sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, param) in store.values_mut().iter_mut().enumerate() {
            let Some(g) = grads.get(bound.vars()[i]) else {
                continue;
            };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j] * clip;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::new(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let mut g = Graph::new();
            let b = store.bind(&mut g, true);
            let x = b.var(id);
            let sq = g.mul(x, x);
            let loss = g.sum(sq);
            let grads = g.backward(loss);
            opt.step(&mut store, &b, &grads);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_learning_rate_is_bit_exact_noop() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::new(&[3], vec![0.1, 1e-300, -7.25]));
        let before = store.checksum();
        let mut opt = Adam::new(&store, 0.0);
        for _ in 0..3 {
            let mut g = Graph::new();
            let b = store.bind(&mut g, true);
            let e = g.exp(b.var(id));
            let loss = g.sum(e);
            let grads = g.backward(loss);
            opt.step(&mut store, &b, &grads);
        }
        assert_eq!(before, store.checksum());
    }
}
