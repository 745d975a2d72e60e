//! Explicitly-sparse multilevel representation of Helmholtz N-body
//! summation matrices.
//!
//! A balanced octree splits the point cloud into a low-frequency regime,
//! where non-directional wavelet bases are built from SVDs of moment
//! matrices, and a high-frequency regime, where directional curvelet bases
//! are built per cone. In these bases the summation matrix is nearly
//! sparse; [`assembly`] computes its significant blocks directly and
//! [`transform`] applies it as forward transform, block product and
//! inverse transform.

pub mod assembly;
pub mod basis;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod kernels;
mod par;
pub mod transform;
pub mod translations;
pub mod vec3;

pub use error::{Error, Result};
pub use kernels::{direct_sum, eval_kernel, relative_error, KernelSpec, Layer, PointSet};
pub use par::is_parallel;
