//! Multi-camera 3D human pose fusion.
//!
//! Per-camera 2D skeletons are lifted to 3D with depth, registered into a
//! shared world frame and fused asynchronously into per-person tracks made of
//! one unscented Kalman filter per joint plus a centroid filter used for
//! association.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod lifting;
pub mod model;
pub mod sim;
pub mod tracker;
pub mod ukf;

pub use error::{Error, Result};
