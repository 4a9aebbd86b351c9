use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    /// Fractions of the total step budget at which the rate is multiplied
    /// by `lr_decay`.
    pub milestones: Vec<f64>,
    pub lr_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 2e-5,
            max_grad_norm: 10.0,
            milestones: vec![0.4, 0.7, 0.9],
            lr_decay: 0.5,
        }
    }
}

impl SgdConfig {
    /// Learning rate in effect at `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|m| step as f64 >= *m * total as f64)
            .count();
        self.lr * self.lr_decay.powi(passed as i32)
    }
}

/// Scale `grads` so that its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = grads.norm().as_f64();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::lit(max_norm / norm));
    }
    norm
}

/// SGD with momentum and decoupled-from-clipping L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    pub velocity: ParamSet<T>,
}

impl<T: Real> Sgd<T> {
    pub fn new(config: SgdConfig, params: &ParamSet<T>) -> Self {
        Sgd {
            config,
            velocity: params.zeros_like(),
        }
    }

    /// Clip, add weight decay, update velocity and parameters. Returns the
    /// pre-clip gradient norm.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &mut ParamSet<T>, lr: f64) -> f64 {
        let norm = clip_grad_norm(grads, self.config.max_grad_norm);
        let (mom, wd, lr) = (
            T::lit(self.config.momentum),
            T::lit(self.config.weight_decay),
            T::lit(lr),
        );
        for ((p, g), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.velocity.tensors)
        {
            for ((pi, gi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut v.data) {
                let d = *gi + wd * *pi;
                *vi = mom * *vi + d;
                *pi = *pi - lr * *vi;
            }
        }
        norm
    }
}
