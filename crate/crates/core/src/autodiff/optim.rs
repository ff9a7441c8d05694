use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
    steps: u64,
    skipped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held a NaN or infinity; nothing was updated.
    SkippedNonFinite,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, state: BTreeMap::new(), steps: 0, skipped: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<ParamId, Vec<f64>>) -> StepOutcome {
        if grads.values().flatten().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return StepOutcome::SkippedNonFinite;
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (&id, g) in grads {
            let n = g.len();
            let (m, v) = self.state.entry(id).or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let values = store.get_mut(id).data_mut();
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                values[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        StepOutcome::Applied
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    fn single(value: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(value));
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, id) = single(1.25);
        let mut adam = Adam::new(0.1);
        let grads = BTreeMap::from([(id, vec![0.0])]);
        for _ in 0..5 {
            adam.step(&mut store, &grads);
        }
        assert_eq!(store.get(id).data()[0], 1.25);
    }

    #[test]
    fn moves_against_gradient_sign() {
        for g in [2.0, -0.5] {
            let (mut store, id) = single(0.0);
            let mut adam = Adam::new(0.1);
            adam.step(&mut store, &BTreeMap::from([(id, vec![g])]));
            let w = store.get(id).data()[0];
            assert!(w * g < 0.0, "g={g} w={w}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let (mut store, id) = single(0.0);
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let mut g = Graph::new();
            let w = g.param(&store, id);
            let three = g.constant(Tensor::scalar(3.0));
            let d = g.sub(w, three).unwrap();
            let loss = g.mul(d, d).unwrap();
            g.backward(loss).unwrap();
            adam.step(&mut store, &g.param_grads().unwrap());
        }
        let w = store.get(id).data()[0];
        assert!((w - 3.0).abs() < 1e-3, "w = {w}");
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let (mut store, id) = single(1.0);
        let mut adam = Adam::new(0.1);
        let out = adam.step(&mut store, &BTreeMap::from([(id, vec![f64::NAN])]));
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(adam.skipped(), 1);
        assert_eq!(store.get(id).data()[0], 1.0);
    }
}
