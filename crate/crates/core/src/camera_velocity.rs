//! Object velocity from sparse optical flow.
//!
//! Feature tracks on one object are reduced to a robust 2D flow Gaussian,
//! lifted to a metric velocity in camera axes using the object depth, and
//! finally rotated to the global frame with the ego motion added back. The
//! result carries no information along the optical axis.

use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::egomotion::GlobalPoint;
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::sim::{CameraModel, FeatureTrack};

/// Object-level image flow in pixels per second, `(v_θ, v_φ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowGaussian2D {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub inlier_count: usize,
    /// Indices into the input track list.
    pub inliers: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameTag {
    Camera,
    Lidar,
    Fused,
}

/// Velocity Gaussian in the global frame (m/s, m²/s²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityGaussian {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub frame_tag: FrameTag,
}

impl VelocityGaussian {
    pub fn new(mean: Vector3<f64>, cov: Matrix3<f64>, frame_tag: FrameTag) -> Self {
        VelocityGaussian {
            mean,
            cov: (cov + cov.transpose()) * 0.5,
            frame_tag,
        }
    }
}

/// Velocity and covariance in camera axes (x along image u, y along image v, z optical).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraRelativeVelocity {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthEstimator {
    #[default]
    Mean,
    Median,
}

fn consensus(disp: &[Vector2<f64>], model: &Vector2<f64>, threshold: f64) -> Vec<usize> {
    (0..disp.len()).filter(|&i| (disp[i] - model).norm() <= threshold).collect()
}

fn mean_of(disp: &[Vector2<f64>], idx: &[usize]) -> Vector2<f64> {
    idx.iter().map(|&i| disp[i]).sum::<Vector2<f64>>() / idx.len() as f64
}

/// Robust flow statistics over `tracks` observed `dt` seconds apart.
///
/// RANSAC on a constant-flow model: each hypothesis is one track's pixel
/// displacement and its consensus set is every track whose displacement lies
/// within `ransac_threshold` pixels. The best set is refined once around its
/// own mean. When `ransac_iters` covers every track, all hypotheses are
/// tried in order; otherwise they are drawn with a seeded generator.
pub fn flow_stats(
    tracks: &[FeatureTrack],
    dt: f64,
    ransac_threshold: f64,
    ransac_iters: usize,
    rng_seed: u64,
) -> Result<FlowGaussian2D> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(ransac_threshold > 0.0) || ransac_iters == 0 {
        return Err(Error::InvalidArgument("ransac threshold and iterations must be positive".into()));
    }
    if tracks.len() < 2 {
        return Err(Error::InsufficientInliers { found: tracks.len() });
    }
    let disp: Vec<Vector2<f64>> = tracks.iter().map(|t| t.pixel_t1 - t.pixel_t0).collect();
    if disp.iter().any(|d| !d.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidMeasurement("non-finite pixel coordinates".into()));
    }

    let mut best: Vec<usize> = Vec::new();
    let consider = |h: usize, best: &mut Vec<usize>| {
        let set = consensus(&disp, &disp[h], ransac_threshold);
        if set.len() > best.len() {
            *best = set;
        }
    };
    if ransac_iters >= disp.len() {
        for h in 0..disp.len() {
            consider(h, &mut best);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for _ in 0..ransac_iters {
            consider(rng.gen_range(0..disp.len()), &mut best);
        }
    }
    let refined = consensus(&disp, &mean_of(&disp, &best), ransac_threshold);
    if refined.len() >= best.len() {
        best = refined;
    }
    if best.len() < 2 {
        return Err(Error::InsufficientInliers { found: best.len() });
    }

    let flows: Vec<Vector2<f64>> = best.iter().map(|&i| disp[i] / dt).collect();
    let n = flows.len() as f64;
    let mean = flows.iter().sum::<Vector2<f64>>() / n;
    let cov = flows.iter().map(|f| (f - mean) * (f - mean).transpose()).sum::<Matrix2<f64>>() / (n - 1.0);
    Ok(FlowGaussian2D {
        mean,
        cov,
        inlier_count: best.len(),
        inliers: best,
    })
}

/// Lifts image flow to a metric velocity in camera axes: `d · (v_θ/f_θ, v_φ/f_φ, 0)`.
pub fn flow_to_camera_velocity(flow: &FlowGaussian2D, depth: f64, cam: &CameraModel) -> Result<CameraRelativeVelocity> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::InvalidArgument(format!("depth must be positive, got {depth}")));
    }
    if !(cam.f_theta > 0.0 && cam.f_phi > 0.0) {
        return Err(Error::InvalidArgument("focal lengths must be positive".into()));
    }
    let a = Matrix3x2::new(
        depth / cam.f_theta, 0.0, //
        0.0, depth / cam.f_phi, //
        0.0, 0.0,
    );
    Ok(CameraRelativeVelocity {
        mean: a * flow.mean,
        cov: a * flow.cov * a.transpose(),
    })
}

/// Global-frame camera velocity: rotate the camera-relative estimate and add
/// the ego velocity of the object center, `v_lin + ω × (center − sensor)`.
/// The ego term is treated as exact and adds no covariance.
pub fn camera_velocity_to_global(
    v_rel: &CameraRelativeVelocity,
    sensor_pose: &Pose,
    cam: &CameraModel,
    ego_linear_vel: &Vector3<f64>,
    ego_angular_vel: &Vector3<f64>,
    object_center_global: &Vector3<f64>,
) -> VelocityGaussian {
    let r = (sensor_pose.rotation * cam.pose_in_sensor.rotation).matrix().to_owned();
    let v_ego = ego_linear_vel + ego_angular_vel.cross(&(object_center_global - sensor_pose.translation));
    VelocityGaussian::new(r * v_rel.mean + v_ego, r * v_rel.cov * r.transpose(), FrameTag::Camera)
}

/// Distance from `sensor_origin` to the object points, averaged (or median).
pub fn object_depth(points: &[GlobalPoint], sensor_origin: &Vector3<f64>, estimator: DepthEstimator) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no object points for depth".into()));
    }
    let mut ranges: Vec<f64> = points.iter().map(|p| (p.position - sensor_origin).norm()).collect();
    Ok(match estimator {
        DepthEstimator::Mean => ranges.iter().sum::<f64>() / ranges.len() as f64,
        DepthEstimator::Median => {
            ranges.sort_by(f64::total_cmp);
            let m = ranges.len() / 2;
            if ranges.len() % 2 == 1 {
                ranges[m]
            } else {
                0.5 * (ranges[m - 1] + ranges[m])
            }
        }
    })
}
