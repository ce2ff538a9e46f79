//! Spatial transformer layer: localization network, affine grid
//! generator and bilinear sampler.
//!
//! Coordinates are normalized to `[-1, 1]` with corner alignment: `-1`
//! is the centre of the first pixel and `+1` the centre of the last, so
//! the identity transform reproduces its input exactly. Samples that fall
//! outside the input read zeros.

use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{kernels, Graph, Padding, Var};
use crate::math;
use crate::nn::{Conv2d, Dense};
use crate::params::ParamStore;
use crate::{Error, Result, Tensor};

/// Scale the localization net starts at; tanh cannot reach 1 exactly.
pub const INITIAL_SCALE: f64 = 0.99;

pub const IDENTITY: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Per-sample 2×3 affine maps `[[a, b, tx], [c, d, ty]]` from output to
/// input coordinates, stored row-major as 6 values per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineTheta(Tensor);

impl AffineTheta {
    pub fn new(rows: &[[f64; 6]]) -> Self {
        let data = rows.iter().flatten().copied().collect();
        AffineTheta(Tensor::new(&[rows.len(), 6], data).expect("6 values per row"))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(&alloc::vec![IDENTITY; n])
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 || t.shape()[1] != 6 {
            return Err(Error::Shape {
                op: "affine_theta",
                msg: alloc::format!("expected [N, 6], got {:?}", t.shape()),
            });
        }
        Ok(AffineTheta(t))
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn row(&self, i: usize) -> [f64; 6] {
        self.0.data()[i * 6..i * 6 + 6].try_into().unwrap()
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }
}

/// `[N, H_out, W_out, 2]` source coordinates `(x, y)` per output pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingGrid(Tensor);

impl SamplingGrid {
    /// Wraps a `[N, H, W, 2]` tensor of `(x, y)` source coordinates.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 {
            return Err(Error::Dimension {
                op: "sampling_grid",
                axis: "rank",
                expected: 4,
                found: s.len(),
            });
        }
        if s[3] != 2 {
            return Err(Error::Dimension {
                op: "sampling_grid",
                axis: "coordinates",
                expected: 2,
                found: s[3],
            });
        }
        Ok(SamplingGrid(t))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn point(&self, n: usize, i: usize, j: usize) -> (f64, f64) {
        let s = self.0.shape();
        let k = ((n * s[1] + i) * s[2] + j) * 2;
        (self.0.data()[k], self.0.data()[k + 1])
    }
}

pub fn affine_grid(theta: &AffineTheta, out_h: usize, out_w: usize) -> Result<SamplingGrid> {
    let mut g = Graph::no_grad();
    let t = g.input(theta.0.clone());
    let grid = g.affine_grid(t, out_h, out_w)?;
    Ok(SamplingGrid(g.value(grid).clone()))
}

pub fn bilinear_sample(input: &Tensor, grid: &SamplingGrid) -> Result<Tensor> {
    let mut g = Graph::no_grad();
    let x = g.input(input.clone());
    let gr = g.input(grid.0.clone());
    let out = g.bilinear_sample(x, gr)?;
    Ok(g.value(out).clone())
}

/// Warps `[N,H,W,C]` by per-sample affine maps at the input resolution.
pub fn warp(input: &Tensor, theta: &AffineTheta) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::Dimension {
            op: "warp",
            axis: "rank",
            expected: 4,
            found: s.len(),
        });
    }
    let grid = affine_grid(theta, s[1], s[2])?;
    bilinear_sample(input, &grid)
}

/// Spatial size and channel count of the map a localization net reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocNetConfig {
    pub size: usize,
    pub channels: usize,
}

const LOC_CONV_SIZE: usize = 5;
const LOC_FILTERS: usize = 20;
const LOC_HIDDEN: usize = 50;

impl LocNetConfig {
    /// Smallest square input for which pool → 5×5 conv → pool → 5×5 conv
    /// (valid convolutions) leaves at least one pixel.
    pub fn min_size() -> usize {
        (1usize..)
            .find(|&n| Self::conv_output(n).is_some())
            .expect("a minimum exists")
    }

    /// Spatial size after the conv stack, if it fits.
    fn conv_output(n: usize) -> Option<usize> {
        let a = n / 2;
        let b = a.checked_sub(LOC_CONV_SIZE - 1).filter(|&v| v >= 1)?;
        let c = b / 2;
        c.checked_sub(LOC_CONV_SIZE - 1).filter(|&v| v >= 1)
    }

    pub fn fits_conv_stack(&self) -> bool {
        Self::conv_output(self.size).is_some()
    }
}

#[derive(Clone, Debug)]
enum LocBody {
    /// maxpool → conv 5×5×20 tanh → maxpool → conv 5×5×20 tanh
    Conv { conv1: Conv2d, conv2: Conv2d },
    /// Flattened input straight into the dense head, for maps too small
    /// for the conv stack.
    Flat,
}

/// Regresses the 6 affine parameters from a feature map. Every layer ends
/// in tanh, so θ lies in (−1, 1).
#[derive(Clone, Debug)]
pub struct LocalizationNet {
    config: LocNetConfig,
    body: LocBody,
    hidden: Dense,
    head: Dense,
}

impl LocalizationNet {
    /// Builds the conv-stack localization net; fails when the input is
    /// smaller than [`LocNetConfig::min_size`].
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: LocNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let Some(out) = LocNetConfig::conv_output(config.size) else {
            return Err(Error::Config(alloc::format!(
                "localization net input {}x{} is below the minimum size {}",
                config.size,
                config.size,
                LocNetConfig::min_size()
            )));
        };
        let conv1 = Conv2d::new(
            store,
            &alloc::format!("{prefix}/conv1"),
            LOC_CONV_SIZE,
            config.channels,
            LOC_FILTERS,
            Padding::Valid,
            rng,
        )?;
        let conv2 = Conv2d::new(
            store,
            &alloc::format!("{prefix}/conv2"),
            LOC_CONV_SIZE,
            LOC_FILTERS,
            LOC_FILTERS,
            Padding::Valid,
            rng,
        )?;
        Self::with_body(
            store,
            prefix,
            config,
            LocBody::Conv { conv1, conv2 },
            out * out * LOC_FILTERS,
            rng,
        )
    }

    /// Dense-only variant: flatten → dense 50 tanh → dense 6 tanh.
    pub fn build_flat<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: LocNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let flat = config.size * config.size * config.channels;
        Self::with_body(store, prefix, config, LocBody::Flat, flat, rng)
    }

    /// Conv stack when the input is large enough, dense-only otherwise.
    pub fn build_for<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: LocNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.fits_conv_stack() {
            Self::build(store, prefix, config, rng)
        } else {
            Self::build_flat(store, prefix, config, rng)
        }
    }

    fn with_body<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: LocNetConfig,
        body: LocBody,
        flat: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = Dense::new(
            store,
            &alloc::format!("{prefix}/fc1"),
            flat,
            LOC_HIDDEN,
            rng,
        )?;
        let head = Dense::new(store, &alloc::format!("{prefix}/fc2"), LOC_HIDDEN, 6, rng)?;
        // Zero weights and a bias of atanh(0.99) on the scale slots: every
        // input starts at θ ≈ diag(0.99, 0.99).
        store.get_mut(head.weight).value_mut().data_mut().fill(0.0);
        let s = math::atanh(INITIAL_SCALE);
        store
            .get_mut(head.bias)
            .value_mut()
            .data_mut()
            .copy_from_slice(&[s, 0.0, 0.0, 0.0, s, 0.0]);
        Ok(LocalizationNet {
            config,
            body,
            hidden,
            head,
        })
    }

    pub fn config(&self) -> LocNetConfig {
        self.config
    }

    pub fn uses_conv_stack(&self) -> bool {
        matches!(self.body, LocBody::Conv { .. })
    }

    /// θ as a `[N, 6]` node.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 {
            return Err(Error::Dimension {
                op: "localization_net",
                axis: "rank",
                expected: 4,
                found: s.len(),
            });
        }
        if s[1] != self.config.size || s[2] != self.config.size {
            return Err(Error::Dimension {
                op: "localization_net",
                axis: "spatial size",
                expected: self.config.size,
                found: s[1],
            });
        }
        if s[3] != self.config.channels {
            return Err(Error::Dimension {
                op: "localization_net",
                axis: "channels",
                expected: self.config.channels,
                found: s[3],
            });
        }
        let mut h = x;
        if let LocBody::Conv { conv1, conv2 } = &self.body {
            h = g.maxpool2d(h)?;
            h = conv1.forward(g, store, h)?;
            h = g.tanh(h)?;
            h = g.maxpool2d(h)?;
            h = conv2.forward(g, store, h)?;
            h = g.tanh(h)?;
        }
        h = g.flatten(h)?;
        h = self.hidden.forward(g, store, h)?;
        h = g.tanh(h)?;
        h = self.head.forward(g, store, h)?;
        g.tanh(h)
    }
}

/// One resolution-preserving spatial transformer.
#[derive(Clone, Debug)]
pub struct StLayer {
    pub locnet: LocalizationNet,
    /// When set, replaces the localization net's output for every sample.
    pub theta_override: Option<[f64; 6]>,
}

/// Output of [`StLayer::forward`].
#[derive(Clone, Copy, Debug)]
pub struct StOutput {
    pub output: Var,
    pub theta: Var,
}

impl StLayer {
    pub fn new(locnet: LocalizationNet) -> Self {
        StLayer {
            locnet,
            theta_override: None,
        }
    }

    /// θ = locnet(x); grid = affine_grid(θ, H, W); out = sample(x, grid).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<StOutput> {
        let (n, h, w) = {
            let s = g.shape(x);
            if s.len() != 4 {
                return Err(Error::Dimension {
                    op: "st_layer",
                    axis: "rank",
                    expected: 4,
                    found: s.len(),
                });
            }
            (s[0], s[1], s[2])
        };
        let theta = match self.theta_override {
            Some(t) => g.input(AffineTheta::new(&alloc::vec![t; n]).0),
            None => self.locnet.forward(g, store, x)?,
        };
        let grid = g.affine_grid(theta, h, w)?;
        let output = g.bilinear_sample(x, grid)?;
        Ok(StOutput { output, theta })
    }

    /// Forward pass outside of training: transformed images and θ.
    pub fn apply(&self, store: &ParamStore, input: &Tensor) -> Result<(Tensor, AffineTheta)> {
        let mut g = Graph::no_grad();
        let x = g.input(input.clone());
        let out = self.forward(&mut g, store, x)?;
        let theta = AffineTheta::from_tensor(g.value(out.theta).clone())?;
        Ok((g.value(out.output).clone(), theta))
    }
}

/// Canonical corner-aligned coordinates `(-1 ..= 1)` for `size` pixels.
pub fn linspace(size: usize) -> Vec<f64> {
    (0..size).map(|i| kernels::norm_coord(i, size)).collect()
}
