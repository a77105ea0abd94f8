//! First-order optimizers and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::{GradStore, Mat, ParamStore};

/// `lr · gamma^(epoch / step_size)`, i.e. multiply by `gamma` every
/// `step_size` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLr {
    pub base_lr: f64,
    pub gamma: f64,
    pub step_size: usize,
}

impl StepLr {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.gamma.powi((epoch / self.step_size.max(1)) as i32)
    }
}

pub trait Optimizer {
    /// Applies one update. Parameters without a gradient are left untouched.
    fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr: f64);
}

/// Stochastic gradient descent with optional heavy-ball momentum and L2
/// weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Mat>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr: f64) {
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        for id in params.ids() {
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            let mut d = g + &(&*p * self.weight_decay);
            if self.momentum != 0.0 {
                let v = self.velocity[id.index()].get_or_insert_with(|| Mat::zeros(d.dim()));
                *v *= self.momentum;
                *v += &d;
                d = v.clone();
            }
            p.zip_mut_with(&d, |p, &d| *p -= lr * d);
        }
    }
}

/// Adam with L2 weight decay added to the gradient (the classic coupled
/// formulation, not AdamW).
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: Vec<Option<(Mat, Mat, i32)>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            state: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr: f64) {
        if self.state.len() < params.len() {
            self.state.resize(params.len(), None);
        }
        for id in params.ids() {
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            let d = g + &(&*p * self.weight_decay);
            let (m, v, t) = self.state[id.index()]
                .get_or_insert_with(|| (Mat::zeros(d.dim()), Mat::zeros(d.dim()), 0));
            *t += 1;
            let (b1, b2) = (self.beta1, self.beta2);
            m.zip_mut_with(&d, |m, &d| *m = b1 * *m + (1.0 - b1) * d);
            v.zip_mut_with(&d, |v, &d| *v = b2 * *v + (1.0 - b2) * d * d);
            let c1 = 1.0 - b1.powi(*t);
            let c2 = 1.0 - b2.powi(*t);
            let eps = self.eps;
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_setup() -> (ParamStore, crate::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Mat::from_elem((1, 2), 3.0));
        (store, id)
    }

    fn grad_of_half_square(store: &ParamStore, id: crate::ParamId) -> GradStore {
        let mut g = GradStore::new(store);
        g.add(id, &store.get(id).clone());
        g
    }

    #[test]
    fn step_schedule_decays_every_step_size_epochs() {
        let s = StepLr { base_lr: 1e-3, gamma: 0.9, step_size: 50 };
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(49), 1e-3);
        assert!((s.lr_at(50) - 9e-4).abs() < 1e-18);
        assert!((s.lr_at(100) - 8.1e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_leaves_params_bit_identical() {
        for opt in [&mut Sgd::new(0.9, 5e-4) as &mut dyn Optimizer, &mut Adam::new(5e-4)] {
            let (mut store, id) = quadratic_setup();
            let before = store.clone();
            let g = grad_of_half_square(&store, id);
            opt.step(&mut store, &g, 0.0);
            assert_eq!(store, before);
        }
    }

    #[test]
    fn optimizers_descend_a_quadratic() {
        for opt in [&mut Sgd::new(0.0, 0.0) as &mut dyn Optimizer, &mut Adam::new(0.0)] {
            let (mut store, id) = quadratic_setup();
            for _ in 0..200 {
                let g = grad_of_half_square(&store, id);
                opt.step(&mut store, &g, 0.05);
            }
            assert!(store.get(id).iter().all(|w| w.abs() < 0.5), "{:?}", store.get(id));
        }
    }
}
