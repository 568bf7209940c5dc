//! Camera-only 3D semantic occupancy prediction at desk scale: voxel
//! geometry, lift-splat view transformation, a collapsed-BEV 2D head with
//! interpolation-sampled 3D features, the loss stack, and FLOPs/latency
//! accounting.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod head;
pub mod metrics;
pub mod rng;
pub mod scenegen;
pub mod supervision;
pub mod tensor;
pub mod view_transform;

pub use error::{OccError, Result};
