//! Parameterized layers built on the autodiff graph.

use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Padding, Var};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::{Result, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

pub fn activation(g: &mut Graph, x: Var, kind: Activation) -> Result<Var> {
    match kind {
        Activation::Relu => g.relu(x),
        Activation::Tanh => g.tanh(x),
    }
}

/// Glorot-uniform initialisation.
pub fn glorot_uniform<R: Rng>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor {
    let limit = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..limit))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        size: usize,
        cin: usize,
        cout: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Result<Self> {
        let area = size * size;
        let kernel = glorot_uniform(rng, &[size, size, cin, cout], area * cin, area * cout);
        Ok(Conv2d {
            kernel: store.add(&alloc::format!("{name}/kernel"), kernel)?,
            bias: store.add(&alloc::format!("{name}/bias"), Tensor::zeros(&[cout]))?,
            padding,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        g.conv2d(x, k, b, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = glorot_uniform(rng, &[din, dout], din, dout);
        Ok(Dense {
            weight: store.add(&alloc::format!("{name}/weight"), w)?,
            bias: store.add(&alloc::format!("{name}/bias"), Tensor::zeros(&[dout]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.dense(x, w, b)
    }
}

/// Batch normalization over the channel (last) axis with learned scale
/// and shift and exponential running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.add(
                &alloc::format!("{name}/gamma"),
                Tensor::full(&[channels], 1.0),
            )?,
            beta: store.add(&alloc::format!("{name}/beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.add_buffer(
                &alloc::format!("{name}/running_mean"),
                Tensor::zeros(&[channels]),
            )?,
            running_var: store.add_buffer(
                &alloc::format!("{name}/running_var"),
                Tensor::full(&[channels], 1.0),
            )?,
            eps: BN_EPSILON,
            momentum: BN_MOMENTUM,
        })
    }

    /// In train mode normalizes with batch statistics and folds them into
    /// the running averages; in eval mode uses the running averages.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let blend = |running: &mut Tensor, batch: &[f64]| {
                    for (r, b) in running.data_mut().iter_mut().zip(batch) {
                        *r = m * *r + (1.0 - m) * b;
                    }
                };
                blend(store.get_mut(self.running_mean).value_mut(), &stats.mean);
                blend(store.get_mut(self.running_var).value_mut(), &stats.var);
                Ok(y)
            }
            Mode::Eval => {
                let mean: Vec<f64> = store.get(self.running_mean).value().data().to_vec();
                let var: Vec<f64> = store.get(self.running_var).value().data().to_vec();
                g.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }
}
