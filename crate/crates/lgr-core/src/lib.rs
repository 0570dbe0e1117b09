//! Point-cloud learning stack built around local grid rendering.
//!
//! The crate is organized bottom-up:
//!
//! - [`scalar`], [`error`], [`rng`]: shared plumbing (generic float trait,
//!   error type, seed derivation).
//! - [`geometry`]: point clouds, farthest point sampling, cube and ball
//!   neighborhood queries producing normalized local regions.
//! - [`lgr`]: the local grid rendering operation that rasterizes a local
//!   region onto a small dense voxel grid, with exact gradients for the
//!   interpolation aggregation.
//! - [`nncore`]: a minimal dense-tensor layer stack (3D convolution, batch
//!   norm, ReLU, pooling, linear, Adam, checkpoints) with explicit
//!   per-layer forward/backward passes.
//! - [`backbone`]: sampling-projection stages and feature-propagation
//!   layers composing the full point-cloud backbone.
//! - [`detect`]: voting, proposal generation, box metrics (IoU, NMS,
//!   average precision), and the training loss.
//! - [`dataio`]: synthetic scene generation, augmentation, and the text
//!   formats for point clouds and ground-truth boxes.
//!
//! All randomized operations take explicit seeds and are deterministic for
//! a fixed seed, input, and build.

// Validation uses `!(x > 0.0)` so NaN is rejected along with
// nonpositive values; the suggested `partial_cmp` form hides that.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Voxel window walks index three parallel coordinate arrays by axis
// position; iterator rewrites obscure the grid arithmetic.
#![allow(clippy::needless_range_loop)]

pub mod backbone;
pub mod dataio;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod lgr;
pub mod nncore;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;
