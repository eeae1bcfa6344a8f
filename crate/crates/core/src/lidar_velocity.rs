//! Object velocity from a single motion-distorted point cloud.
//!
//! A point acquired `Δt` after the frame start is moved back by `Δt·v`.
//! The right `v` makes the corrected cloud as compact as possible, measured
//! as the summed squared deviation from the centroid, both inside small
//! voxels (local term) and over the whole object (global term). The cost is
//! a quadratic in `v`, so the minimizer comes from a 3×3 linear system.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera_velocity::{FrameTag, VelocityGaussian};
use crate::egomotion::GlobalPoint;
use crate::error::{Error, Result};

/// Minimum number of points for an estimate.
pub const MIN_POINTS: usize = 4;
/// Timestamp spread (standard deviation, seconds) below which velocity is unobservable.
pub const MIN_STAMP_STDDEV: f64 = 1e-4;
/// Normal-equation condition number above which the solve is refused.
pub const MAX_CONDITION: f64 = 1e10;

/// Points of one object with their offsets from the reference time.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectObservation {
    pub points: Vec<GlobalPoint>,
    pub frame_start: f64,
    pub delta_t: Vec<f64>,
}

impl ObjectObservation {
    /// `delta_t[i] = points[i].stamp − frame_start`.
    pub fn new(points: Vec<GlobalPoint>, frame_start: f64) -> Result<Self> {
        let delta_t: Vec<f64> = points.iter().map(|p| p.stamp - frame_start).collect();
        if let Some(bad) = delta_t.iter().find(|d| !(**d >= -1e-12) || !d.is_finite()) {
            return Err(Error::OutOfRange(format!("point precedes the reference time by {}", -bad)));
        }
        Ok(ObjectObservation {
            points,
            frame_start,
            delta_t,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Partition of point indices by `floor(position / voxel_size)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub voxel_size: f64,
    pub cells: BTreeMap<[i64; 3], Vec<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarWeights {
    pub local: f64,
    pub global: f64,
}

impl Default for LidarWeights {
    fn default() -> Self {
        LidarWeights { local: 1.0, global: 1.0 }
    }
}

pub fn build_voxels(obs: &ObjectObservation, voxel_size: f64) -> Result<VoxelGrid> {
    if !(voxel_size > 0.0) {
        return Err(Error::InvalidArgument(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in obs.points.iter().enumerate() {
        let key = [0, 1, 2].map(|a| (p.position[a] / voxel_size).floor() as i64);
        cells.entry(key).or_default().push(i);
    }
    Ok(VoxelGrid { voxel_size, cells })
}

/// The cost written as `vᵀ N v − 2 bᵀ v + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalEquations {
    pub n: Matrix3<f64>,
    pub b: Vector3<f64>,
    pub c: f64,
}

impl NormalEquations {
    pub fn cost(&self, v: &Vector3<f64>) -> f64 {
        v.dot(&(self.n * v)) - 2.0 * self.b.dot(v) + self.c
    }

    pub fn gradient(&self, v: &Vector3<f64>) -> Vector3<f64> {
        2.0 * (self.n * v - self.b)
    }
}

/// Weighted index sets: every voxel with the local weight, then the whole cloud.
fn weighted_sets(obs: &ObjectObservation, grid: &VoxelGrid, w: &LidarWeights) -> Vec<(f64, Vec<usize>)> {
    let mut sets: Vec<(f64, Vec<usize>)> = Vec::with_capacity(grid.cells.len() + 1);
    if w.local != 0.0 {
        sets.extend(grid.cells.values().map(|c| (w.local, c.clone())));
    }
    if w.global != 0.0 {
        sets.push((w.global, (0..obs.len()).collect()));
    }
    sets
}

fn check_grid(obs: &ObjectObservation, grid: &VoxelGrid) -> Result<()> {
    let covered: usize = grid.cells.values().map(Vec::len).sum();
    if covered != obs.len() || grid.cells.values().flatten().any(|&i| i >= obs.len()) {
        return Err(Error::MisalignedInput("voxel grid was built from a different observation".into()));
    }
    Ok(())
}

pub fn normal_equations(obs: &ObjectObservation, grid: &VoxelGrid, weights: &LidarWeights) -> Result<NormalEquations> {
    check_grid(obs, grid)?;
    let mut a = 0.0;
    let mut b = Vector3::zeros();
    let mut c = 0.0;
    for (w, idx) in weighted_sets(obs, grid, weights) {
        let n = idx.len() as f64;
        let t_bar = idx.iter().map(|&i| obs.delta_t[i]).sum::<f64>() / n;
        let p_bar = idx.iter().map(|&i| obs.points[i].position).sum::<Vector3<f64>>() / n;
        for &i in &idx {
            let dt = obs.delta_t[i] - t_bar;
            let dp = obs.points[i].position - p_bar;
            a += w * dt * dt;
            b += w * dt * dp;
            c += w * dp.norm_squared();
        }
    }
    Ok(NormalEquations {
        n: Matrix3::identity() * a,
        b,
        c,
    })
}

/// Evaluates the objective directly from the corrected points.
pub fn cost_value(obs: &ObjectObservation, grid: &VoxelGrid, v: &Vector3<f64>, weights: &LidarWeights) -> Result<f64> {
    check_grid(obs, grid)?;
    let corrected: Vec<Vector3<f64>> = obs
        .points
        .iter()
        .zip(&obs.delta_t)
        .map(|(p, dt)| p.position - v * *dt)
        .collect();
    let mut cost = 0.0;
    for (w, idx) in weighted_sets(obs, grid, weights) {
        let centroid = idx.iter().map(|&i| corrected[i]).sum::<Vector3<f64>>() / idx.len() as f64;
        cost += w * idx.iter().map(|&i| (corrected[i] - centroid).norm_squared()).sum::<f64>();
    }
    Ok(cost)
}

/// Minimizes the local plus global variance cost over `v`.
///
/// The covariance treats the corrected points as independent with a common
/// 3×3 scatter `S` (pooled over all sets): since `v̂ = Σ cᵢ Pᵢ` is linear in
/// the points, `Cov(v̂) = (Σ cᵢ²)·S`.
pub fn estimate_velocity(obs: &ObjectObservation, grid: &VoxelGrid, weights: &LidarWeights) -> Result<VelocityGaussian> {
    if obs.len() < MIN_POINTS {
        return Err(Error::EmptyInput(format!(
            "{} points, need at least {MIN_POINTS}",
            obs.len()
        )));
    }
    if !(weights.local >= 0.0 && weights.global >= 0.0) || weights.local + weights.global <= 0.0 {
        return Err(Error::InvalidArgument("lidar weights must be non-negative and not both zero".into()));
    }
    let n = obs.len() as f64;
    let (lo, hi) = obs.delta_t.iter().fold((f64::MAX, f64::MIN), |(l, h), &d| (l.min(d), h.max(d)));
    let mean_dt = obs.delta_t.iter().sum::<f64>() / n;
    let std_dt = (obs.delta_t.iter().map(|d| (d - mean_dt).powi(2)).sum::<f64>() / n).sqrt();
    if hi - lo <= 1e-6 || std_dt <= MIN_STAMP_STDDEV {
        return Err(Error::UnobservableVelocity(format!(
            "timestamp spread {:.3e} s (stddev {std_dt:.3e} s) is too small",
            hi - lo
        )));
    }

    let ne = normal_equations(obs, grid, weights)?;
    let eig = SymmetricEigen::new(ne.n);
    let (i_min, lambda_min) = eig.eigenvalues.argmin();
    let lambda_max = eig.eigenvalues.max();
    if !(lambda_min > 0.0) || lambda_max / lambda_min > MAX_CONDITION {
        return Err(Error::IllConditioned {
            condition: if lambda_min > 0.0 { lambda_max / lambda_min } else { f64::INFINITY },
            null_direction: eig.eigenvectors.column(i_min).into_owned(),
        });
    }
    let n_inv = eig.eigenvectors * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * eig.eigenvectors.transpose();
    let v = n_inv * ne.b;

    // Per-point coefficients and pooled residual scatter.
    let a = ne.n[(0, 0)];
    let mut coef = vec![0.0; obs.len()];
    let mut scatter = Matrix3::zeros();
    let mut dof = 0.0;
    for (w, idx) in weighted_sets(obs, grid, weights) {
        let m = idx.len() as f64;
        let t_bar = idx.iter().map(|&i| obs.delta_t[i]).sum::<f64>() / m;
        let centroid = idx.iter().map(|&i| obs.points[i].position - v * obs.delta_t[i]).sum::<Vector3<f64>>() / m;
        for &i in &idx {
            coef[i] += w * (obs.delta_t[i] - t_bar) / a;
            let r = obs.points[i].position - v * obs.delta_t[i] - centroid;
            scatter += w * r * r.transpose();
        }
        dof += w * (m - 1.0);
    }
    let scatter = scatter / (dof - 1.0).max(1.0);
    let gain: f64 = coef.iter().map(|c| c * c).sum();
    Ok(VelocityGaussian::new(v, scatter * gain, FrameTag::Lidar))
}
