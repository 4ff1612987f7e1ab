//! Geometry-aware graph spatial propagation for sparse-to-dense depth completion.
//!
//! The pipeline: an inverse-distance fill plus a small residual convolution
//! produce an initial depth map and a `P_h·P_w`-channel feature grid; the
//! grid is cut into patch nodes carrying back-projected 3D centers; a few
//! steps of edge-attention message passing over a k-NN graph (rebuilt from
//! the current depth each step) refine the patches; the patches are
//! scattered back into a dense depth map.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geometry;
pub mod graph;
pub mod grid;
pub mod learning;
pub mod matrix;
pub mod metrics;
pub mod par;
pub mod propagation;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
