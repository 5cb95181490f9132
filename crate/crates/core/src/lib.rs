//! Position-aware partial point cloud matching.
//!
//! Rotary 3D position codes, a disentangled attention block, dual-softmax
//! matching with soft Procrustes and repositioning, an embedded-deformation
//! non-rigid ICP solver, and the usual correspondence metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod config;
pub mod deform;
pub mod error;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod nicp;
pub mod pipeline;
pub mod procrustes;
pub mod ransac;
pub mod rope;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{Correspondence, CorrespondenceSet, Point3, PointCloud, Vector3};
pub use procrustes::RigidTransform;
