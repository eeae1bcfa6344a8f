//! Velocity estimation and motion-distortion correction for lidars whose
//! points are acquired over the whole frame, optionally fused with camera
//! optical flow and tracked with a Kalman filter.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod camera_velocity;
pub mod cli;
pub mod egomotion;
pub mod evaluation;
pub mod fusion_tracking;
pub mod geom;
pub mod lidar_velocity;
pub mod sim;

pub use error::{Error, Result};
