//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its
//! forward value and whatever the backward pass needs, and
//! [`Graph::backward`] walks the tape once in reverse. Graphs are built per
//! minibatch and thrown away afterwards; parameters live in a
//! [`ParamStore`](crate::params::ParamStore) and enter a graph as leaves.

mod graph;
pub mod kernels;

pub use graph::{Graph, Padding, Var};
