use std::collections::BTreeMap;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Adam with decoupled weight decay. Decay skips parameters registered
/// without it (biases, norm gains).
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: BTreeMap<ParamId, Tensor>,
    v: BTreeMap<ParamId, Tensor>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update. Gradients for frozen or removed parameters are ignored.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<ParamId, Tensor>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (&id, g) in grads {
            if !store.contains(id) || !store.is_trainable(id) {
                continue;
            }
            let decay = if store.decays(id) { lr * self.weight_decay } else { 0.0 };
            let m = self.m.entry(id).or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let v = self.v.entry(id).or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let p = store.value_mut(id);
            for (((p, m), v), &g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= decay * *p;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(1, 2, vec![1.0, -1.0]), false);
        let mut opt = AdamW::new(0.0);
        let grads = BTreeMap::from([(w, Tensor::from_vec(1, 2, vec![0.5, -3.0]))]);
        opt.step(&mut store, &grads, 0.1);
        let got = store.value(w);
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        assert!((got.get(0, 0) - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((got.get(0, 1) - (-1.0 + 0.1 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn decay_and_freezing() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(1, 1, 2.0), true);
        let b = store.add("b", Tensor::full(1, 1, 2.0), false);
        let f = store.add("f", Tensor::full(1, 1, 2.0), true);
        store.set_trainable(f, false);
        let zero = Tensor::zeros(1, 1);
        let grads = BTreeMap::from([(w, zero.clone()), (b, zero.clone()), (f, Tensor::full(1, 1, 1.0))]);
        let mut opt = AdamW::new(0.05);
        opt.step(&mut store, &grads, 0.1);
        assert!((store.value(w).item() - 2.0 * (1.0 - 0.1 * 0.05)).abs() < 1e-15);
        assert_eq!(store.value(b).item(), 2.0);
        assert_eq!(store.value(f).item(), 2.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(1, 3, vec![3.0, -2.0, 0.5]), false);
        let mut opt = AdamW::new(0.0);
        for _ in 0..2000 {
            let g = store.value(w).map(|x| 2.0 * x);
            opt.step(&mut store, &BTreeMap::from([(w, g)]), 0.01);
        }
        assert!(store.value(w).norm() < 1e-2);
    }
}
