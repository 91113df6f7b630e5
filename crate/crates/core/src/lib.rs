//! Numerical core for monocular 3D detection: box overlaps, grouped
//! differentiable NMS, target assignment, loss-noise analysis, ground-plane
//! depth geometry and scale-equivariant filtering.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod nms;
pub mod target_loss;
pub mod loss_analysis;
pub mod depth;
pub mod equivariance;
