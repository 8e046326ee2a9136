//! Modular meta-learning over abstract graph networks.
//!
//! This crate learns a small shared library of neural modules (node modules
//! and edge modules) that are composed into graph-shaped predictors. Which
//! module sits in which slot of the graph is a discrete per-task *structure*,
//! searched by simulated annealing, while the module weights themselves are
//! trained by gradient descent across all tasks at once. Adaptation to a new
//! task touches only the structure; the weights stay frozen.
//!
//! The pieces:
//!
//! - [`nn`]: a minimal dense MLP core with taped reverse-mode gradients and
//!   SGD/Adam, `f64` throughout so gradients can be checked against central
//!   finite differences.
//! - [`geometry`]: planar helpers for spatially grounded graphs: nearest-site
//!   assignment, regular grids, and a Bowyer-Watson Delaunay triangulation.
//! - [`graph`]: graph topologies (a wheel graph with a pusher node, and a
//!   grid "element network" whose node types come from a material map),
//!   message passing with attention out of the pusher, and exact
//!   backpropagation through the unrolled computation.
//! - [`search`]: structure initialization and single-slot proposals, the
//!   Metropolis acceptance rule, frozen-library adaptation, and the
//!   alternating annealing/gradient training loop.
//! - [`taskbench`]: synthetic compositional metasets with known ground truth,
//!   RMS normalization (the "predict no motion" baseline scores exactly 1),
//!   metrics, a pooled no-adaptation baseline, and metaset file I/O.

pub mod checkpoint;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod nn;
pub mod search;
pub mod taskbench;

pub use error::{Error, Result};
