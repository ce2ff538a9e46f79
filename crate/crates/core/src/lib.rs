//! Deep adaptive clustering with spatial transformer layers.
//!
//! This crate holds the algorithmic core and needs only `alloc`: a small
//! reverse-mode autodiff engine over `f64` tensors, the spatial transformer
//! layer, the pairwise-similarity clustering objective with its threshold
//! schedule, the backbone network, clustering metrics and the
//! deterministic data pipeline (augmentation and batching). File formats,
//! the experiment harness and the CLI live in the `stdac` crate.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod augment;
pub mod autodiff;
pub mod batch;
pub mod checkpoint;
pub mod dac;
pub mod data;
mod error;
pub mod gradcheck;
pub(crate) mod math;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod params;
pub mod stn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
