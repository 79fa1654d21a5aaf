//! Two-view relative pose estimation from pixel matches annotated with
//! monocular depth priors.
//!
//! The priors are treated as affine-ambiguous: each image's depth map is
//! known only up to an unknown scale and shift. The crate estimates rotation,
//! translation, the relative scale `alpha`, the per-image shifts `beta1`,
//! `beta2` and, optionally, one or two focal lengths.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geom;
pub mod poly;
pub mod ransac;
pub mod refine;
pub mod solvers;
pub mod synth;

pub use error::{Error, Result};
pub use geom::*;
