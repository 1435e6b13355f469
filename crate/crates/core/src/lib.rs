//! Range-image 3D object detection with point-set aggregation kernels.
//!
//! The crate carries per-pixel spherical coordinates and validity through a
//! 2D network whose layers can use geometry-aware kernels in place of the
//! plain inner product, and ships everything needed to train and evaluate
//! such a detector on synthetic LiDAR scans.

pub mod backbone;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod labels;
pub mod metrics;
pub(crate) mod par;
pub mod rangeimage;
pub mod simgen;
pub mod tensorcore;
pub mod train;

pub use error::{Error, Result};
