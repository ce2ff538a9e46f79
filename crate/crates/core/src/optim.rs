use alloc::vec::Vec;

use crate::math;
use crate::params::ParamStore;
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are indexed like the
/// parameter store they were created for.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value().shape()))
                .collect()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `store`.
    /// Gradients are left in place; callers reset them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                left: store.len(),
                right: self.m.len(),
            });
        }
        for id in store.ids() {
            let p = store.get(id);
            if p.grad().shape() != self.m[id.index()].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    msg: alloc::format!(
                        "{}: gradient {:?} vs state {:?}",
                        p.name(),
                        p.grad().shape(),
                        self.m[id.index()].shape()
                    ),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - math::powi(beta1, self.step);
        let c2 = 1.0 - math::powi(beta2, self.step);
        for id in store.ids() {
            if !store.get(id).trainable() {
                continue;
            }
            let grad = store.get(id).grad().data().to_vec();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let value = store.get_mut(id).value_mut().data_mut();
            for (((p, g), m), v) in value.iter_mut().zip(&grad).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (math::sqrt(vhat) + epsilon);
            }
        }
        Ok(())
    }
}
