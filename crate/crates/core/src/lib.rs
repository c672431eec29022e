//! Dense virtual-marker soft labels for articulated 3D shapes.
//!
//! The crate covers the whole pipeline: sparse marker placement on a rigged
//! template, heat-equilibrium densification into per-vertex soft labels,
//! pose-augmented depth rendering, a sparse voxel classifier trained on the
//! soft labels, oneshot and multiview inference, and geodesic correspondence
//! evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod classifier;
pub mod correspondence;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod mesh;
pub mod render;
pub mod rig;
pub mod softlabel;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
