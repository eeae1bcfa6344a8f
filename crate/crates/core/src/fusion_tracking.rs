//! Lidar/camera velocity fusion and multi-object Kalman tracking.
//!
//! Velocities are split along the sensor-to-object ray. The lidar estimate
//! is kept for the radial part; tangentially the two Gaussians are combined
//! with a covariance-weighted gain. Fused velocities then feed an 11-state
//! constant-velocity Kalman filter per object, associated across frames by
//! 3D IOU and the Hungarian method.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera_velocity::{FrameTag, VelocityGaussian};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, RadialBasis};

pub type State = SVector<f64, 11>;
pub type StateCov = SMatrix<f64, 11, 11>;

const YAW: usize = 3;
const SCORE: usize = 7;
const VEL: usize = 8;

/// Velocity split into the radial component and the 2D tangential part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionalVelocity {
    pub radial_mean: f64,
    pub radial_var: f64,
    pub tangential_mean: Vector2<f64>,
    pub tangential_cov: Matrix2<f64>,
    pub basis: RadialBasis,
}

pub fn project_gaussian(v: &VelocityGaussian, basis: &RadialBasis) -> DirectionalVelocity {
    let r = basis.radial;
    let t = basis.tangential_rows();
    DirectionalVelocity {
        radial_mean: v.mean.dot(&r),
        radial_var: r.dot(&(v.cov * r)),
        tangential_mean: t * v.mean,
        tangential_cov: t * v.cov * t.transpose(),
        basis: *basis,
    }
}

/// Camera estimate split along the sensor ray.
///
/// The camera leaves the velocity along its optical axis `z` open. When the
/// object sits off the axis that missing part leaks into the ray-tangential
/// plane, so the open component is filled to match the lidar radial speed
/// `s` before projecting: `v = m + z·(s − u·m)/(u·z)`. The radial fields of
/// the result are `s` and its variance. On the axis this equals
/// [`project_gaussian`].
pub fn camera_on_ray(
    camera: &VelocityGaussian,
    optical_axis: &Vector3<f64>,
    basis: &RadialBasis,
    radial_mean: f64,
    radial_var: f64,
) -> Result<DirectionalVelocity> {
    let z = optical_axis.normalize();
    let u = basis.radial;
    let uz = u.dot(&z);
    if uz.abs() < 1e-3 {
        return Err(Error::DegenerateGeometry("object ray is perpendicular to the optical axis".into()));
    }
    let t = basis.tangential_rows();
    let fill = Matrix3::identity() - z * u.transpose() / uz;
    let b = t * fill;
    let tz = t * z / uz;
    let v = fill * camera.mean + z * (radial_mean / uz);
    let cov = b * camera.cov * b.transpose() + tz * tz.transpose() * radial_var;
    Ok(DirectionalVelocity {
        radial_mean,
        radial_var,
        tangential_mean: t * v,
        tangential_cov: (cov + cov.transpose()) * 0.5,
        basis: *basis,
    })
}

/// Result of [`fuse`]; `regularized` is set when the tangential sum was singular.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fused {
    pub velocity: VelocityGaussian,
    pub gain: Matrix2<f64>,
    pub regularized: bool,
}

/// Radial from lidar; tangential `v_l + K(v_c − v_l)` with `K = Σ_l(Σ_l + Σ_c)⁻¹`.
pub fn fuse(lidar: &DirectionalVelocity, camera: &DirectionalVelocity) -> Result<Fused> {
    if (lidar.basis.matrix() - camera.basis.matrix()).amax() > 1e-9 {
        return Err(Error::MisalignedInput("lidar and camera velocities use different bases".into()));
    }
    let sum = lidar.tangential_cov + camera.tangential_cov;
    let (inv, regularized) = match sum.try_inverse().filter(|_| sum.determinant().abs() > 1e-300) {
        Some(inv) => (inv, false),
        None => {
            let reg = sum + Matrix2::identity() * 1e-9;
            let inv = reg
                .try_inverse()
                .ok_or_else(|| Error::InvalidMeasurement("tangential covariances are not usable".into()))?;
            (inv, true)
        }
    };
    let gain = lidar.tangential_cov * inv;
    let t_mean = lidar.tangential_mean + gain * (camera.tangential_mean - lidar.tangential_mean);
    let t_cov = (Matrix2::identity() - gain) * lidar.tangential_cov;
    let t_cov = (t_cov + t_cov.transpose()) * 0.5;

    let b = &lidar.basis;
    let t = b.tangential_rows();
    let mean = b.radial * lidar.radial_mean + t.transpose() * t_mean;
    let cov = b.radial * b.radial.transpose() * lidar.radial_var + t.transpose() * t_cov * t;
    Ok(Fused {
        velocity: VelocityGaussian::new(mean, cov, FrameTag::Fused),
        gain,
        regularized,
    })
}

/// Yaw-oriented 3D box; `dims` is (l, w, h) with `l` along the heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3 {
    pub center: Vector3<f64>,
    pub yaw: f64,
    pub dims: Vector3<f64>,
}

impl Box3 {
    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    /// Footprint corners, counter-clockwise.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.dims.x / 2.0, self.dims.y / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
            .map(|(x, y)| Vector2::new(self.center.x + c * x - s * y, self.center.y + s * x + c * y))
    }
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn polygon_area(p: &[Vector2<f64>]) -> f64 {
    let n = p.len();
    (0..n).map(|i| cross2(&p[i], &p[(i + 1) % n])).sum::<f64>().abs() / 2.0
}

/// Sutherland–Hodgman clipping of `subject` by the convex counter-clockwise `clip`.
fn clip_polygon(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let side = |p: &Vector2<f64>| cross2(&(b - a), &(p - a));
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (sp, sq) = (side(&p), side(&q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                out.push(p + (q - p) * (sp / (sp - sq)));
            }
        }
    }
    out
}

/// 3D IOU of yaw-oriented boxes: footprint intersection area times vertical overlap.
pub fn iou3d(a: &Box3, b: &Box3) -> f64 {
    let poly = clip_polygon(&a.footprint(), &b.footprint());
    let area = if poly.len() >= 3 { polygon_area(&poly) } else { 0.0 };
    let top = (a.center.z + a.dims.z / 2.0).min(b.center.z + b.dims.z / 2.0);
    let bottom = (a.center.z - a.dims.z / 2.0).max(b.center.z - b.dims.z / 2.0);
    let inter = area * (top - bottom).max(0.0);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum-cost assignment for a rectangular cost matrix (rows × cols).
/// Returns, for each row, the assigned column (`None` if there are more rows than columns).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        let mut out = vec![None; rows];
        for (j, i) in hungarian(&transposed).into_iter().enumerate() {
            if let Some(i) = i {
                out[i] = Some(j);
            }
        }
        return out;
    }
    // Potentials method, 1-based with a virtual column 0.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Association {
    /// (track index, detection index, IOU).
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Hungarian assignment on `1 − IOU`, dropping pairs below `iou_min`.
pub fn associate(tracks: &[Box3], detections: &[Box3], iou_min: f64) -> Association {
    let iou: Vec<Vec<f64>> = tracks.iter().map(|t| detections.iter().map(|d| iou3d(t, d)).collect()).collect();
    let cost: Vec<Vec<f64>> = iou.iter().map(|row| row.iter().map(|x| 1.0 - x).collect()).collect();
    let assignment = if detections.is_empty() { vec![None; tracks.len()] } else { hungarian(&cost) };
    let mut out = Association::default();
    let mut det_used = vec![false; detections.len()];
    for (ti, a) in assignment.into_iter().enumerate() {
        match a {
            Some(di) if iou[ti][di] >= iou_min => {
                det_used[di] = true;
                out.matches.push((ti, di, iou[ti][di]));
            }
            _ => out.unmatched_tracks.push(ti),
        }
    }
    out.unmatched_detections = (0..detections.len()).filter(|&d| !det_used[d]).collect();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessNoise {
    /// White-acceleration spectral density (m/s²).
    pub sigma_accel: f64,
    /// Random-walk variance rates per second for yaw, dimensions and score.
    pub yaw_rate_var: f64,
    pub dims_rate_var: f64,
    pub score_rate_var: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        ProcessNoise {
            sigma_accel: 1.0,
            yaw_rate_var: 1e-3,
            dims_rate_var: 1e-4,
            score_rate_var: 1e-3,
        }
    }
}

/// Measurement variances for the box part of a detection; the velocity block
/// comes from the fused covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementNoise {
    pub center_var: f64,
    pub yaw_var: f64,
    pub dims_var: f64,
    pub score_var: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        MeasurementNoise {
            center_var: 0.01,
            yaw_var: 4e-4,
            dims_var: 2.5e-3,
            score_var: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub min_hits: usize,
    pub max_misses: usize,
    pub iou_min: f64,
    pub process: ProcessNoise,
    pub measurement: MeasurementNoise,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            min_hits: 2,
            max_misses: 2,
            iou_min: 0.25,
            process: ProcessNoise::default(),
            measurement: MeasurementNoise::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub bbox: Box3,
    pub score: f64,
    pub velocity: VelocityGaussian,
}

impl Detection {
    fn measurement(&self) -> State {
        let b = &self.bbox;
        let v = self.velocity.mean;
        State::from_column_slice(&[
            b.center.x, b.center.y, b.center.z, b.yaw, b.dims.x, b.dims.y, b.dims.z, self.score, v.x, v.y, v.z,
        ])
    }

    fn noise(&self, m: &MeasurementNoise) -> StateCov {
        let mut r = StateCov::zeros();
        for i in 0..3 {
            r[(i, i)] = m.center_var;
            r[(4 + i, 4 + i)] = m.dims_var;
        }
        r[(YAW, YAW)] = m.yaw_var;
        r[(SCORE, SCORE)] = m.score_var;
        r.fixed_view_mut::<3, 3>(VEL, VEL).copy_from(&self.velocity.cov);
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub id: u64,
    /// (x, y, z, θ, l, w, h, s, vx, vy, vz).
    pub state: State,
    pub cov: StateCov,
    pub age: usize,
    pub hits: usize,
    pub misses: usize,
}

impl Track {
    pub fn bbox(&self) -> Box3 {
        Box3 {
            center: self.state.fixed_rows::<3>(0).into_owned(),
            yaw: self.state[YAW],
            dims: self.state.fixed_rows::<3>(4).into_owned(),
        }
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(VEL).into_owned()
    }

    pub fn velocity_cov(&self) -> Matrix3<f64> {
        self.cov.fixed_view::<3, 3>(VEL, VEL).into_owned()
    }

    pub fn score(&self) -> f64 {
        self.state[SCORE]
    }
}

fn symmetrize(m: &StateCov) -> StateCov {
    (m + m.transpose()) * 0.5
}

/// Constant-velocity prediction over `dt`.
pub fn kf_predict(track: &Track, dt: f64, q: &ProcessNoise) -> Result<Track> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("prediction step must be positive, got {dt}")));
    }
    let mut f = StateCov::identity();
    for i in 0..3 {
        f[(i, VEL + i)] = dt;
    }
    let mut qm = StateCov::zeros();
    let s2 = q.sigma_accel * q.sigma_accel;
    for i in 0..3 {
        qm[(i, i)] = s2 * dt.powi(4) / 4.0;
        qm[(i, VEL + i)] = s2 * dt.powi(3) / 2.0;
        qm[(VEL + i, i)] = s2 * dt.powi(3) / 2.0;
        qm[(VEL + i, VEL + i)] = s2 * dt * dt;
        qm[(4 + i, 4 + i)] = q.dims_rate_var * dt;
    }
    qm[(YAW, YAW)] = q.yaw_rate_var * dt;
    qm[(SCORE, SCORE)] = q.score_rate_var * dt;

    let mut out = track.clone();
    out.state = f * track.state;
    out.state[YAW] = wrap_angle(out.state[YAW]);
    out.cov = symmetrize(&(f * track.cov * f.transpose() + qm));
    out.age += 1;
    Ok(out)
}

/// Linear update with every state component observed (Joseph form).
pub fn kf_update(track: &Track, det: &Detection, noise: &MeasurementNoise) -> Result<Track> {
    let r = symmetrize(&det.noise(noise));
    if r.iter().any(|x| !x.is_finite()) || r.symmetric_eigenvalues().min() < -1e-12 {
        return Err(Error::InvalidMeasurement("measurement covariance is not positive semi-definite".into()));
    }
    let mut innovation = det.measurement() - track.state;
    innovation[YAW] = wrap_angle(innovation[YAW]);
    let s = track.cov + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::InvalidMeasurement("innovation covariance is singular".into()))?;
    let k = track.cov * s_inv;
    let i_k = StateCov::identity() - k;
    let mut out = track.clone();
    out.state = track.state + k * innovation;
    out.state[YAW] = wrap_angle(out.state[YAW]);
    out.state[SCORE] = out.state[SCORE].clamp(0.0, 1.0);
    out.cov = symmetrize(&(i_k * track.cov * i_k.transpose() + k * r * k.transpose()));
    Ok(out)
}

/// Multi-object tracker. Must be driven frame by frame from a single owner.
#[derive(Clone, Debug)]
pub struct Tracker {
    pub config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    frames_seen: usize,
}

/// A track reported for the current frame together with the detection it absorbed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackReport {
    pub track: Track,
    pub detection: usize,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Tracker {
            config,
            tracks: Vec::new(),
            next_id: 1,
            frames_seen: 0,
        }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn spawn(&mut self, det: &Detection) -> Track {
        let mut cov = symmetrize(&det.noise(&self.config.measurement));
        for i in 0..3 {
            cov[(VEL + i, VEL + i)] += 1e-6;
        }
        let track = Track {
            id: self.next_id,
            state: det.measurement(),
            cov,
            age: 1,
            hits: 1,
            misses: 0,
        };
        self.next_id += 1;
        track
    }

    /// Predict, associate, update, spawn and retire. Returns the tracks to
    /// report this frame: updated ones that are confirmed, or all updated ones
    /// during the first `min_hits` frames.
    pub fn step(&mut self, detections: &[Detection], dt: f64) -> Result<Vec<TrackReport>> {
        let cfg = self.config;
        if self.frames_seen > 0 {
            self.tracks = self
                .tracks
                .iter()
                .map(|t| kf_predict(t, dt, &cfg.process))
                .collect::<Result<_>>()?;
        }
        let boxes: Vec<Box3> = self.tracks.iter().map(Track::bbox).collect();
        let det_boxes: Vec<Box3> = detections.iter().map(|d| d.bbox).collect();
        let assoc = associate(&boxes, &det_boxes, cfg.iou_min);

        let mut updated: Vec<(usize, usize)> = Vec::new();
        for &(ti, di, _) in &assoc.matches {
            let mut t = kf_update(&self.tracks[ti], &detections[di], &cfg.measurement)?;
            t.hits += 1;
            t.misses = 0;
            self.tracks[ti] = t;
            updated.push((ti, di));
        }
        for &ti in &assoc.unmatched_tracks {
            self.tracks[ti].misses += 1;
        }
        for &di in &assoc.unmatched_detections {
            let t = self.spawn(&detections[di]);
            self.tracks.push(t);
            updated.push((self.tracks.len() - 1, di));
        }

        let warmup = self.frames_seen < cfg.min_hits;
        let reports = updated
            .iter()
            .filter(|(ti, _)| warmup || self.tracks[*ti].hits >= cfg.min_hits)
            .map(|&(ti, di)| TrackReport {
                track: self.tracks[ti].clone(),
                detection: di,
            })
            .collect();
        self.tracks.retain(|t| t.misses <= cfg.max_misses);
        self.frames_seen += 1;
        Ok(reports)
    }
}

pub const TRACKS_HEADER: &str = "frame,stamp,track_id,cx,cy,cz,yaw,l,w,h,score,vx,vy,vz,var_vx,var_vy,var_vz";

/// One row of `tracks_out.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub frame: usize,
    pub stamp: f64,
    pub track_id: u64,
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub yaw: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub var_vx: f64,
    pub var_vy: f64,
    pub var_vz: f64,
}

impl TrackRow {
    pub fn new(frame: usize, stamp: f64, t: &Track) -> Self {
        let s = &t.state;
        let c = t.velocity_cov();
        TrackRow {
            frame,
            stamp,
            track_id: t.id,
            cx: s[0],
            cy: s[1],
            cz: s[2],
            yaw: s[3],
            l: s[4],
            w: s[5],
            h: s[6],
            score: s[7],
            vx: s[8],
            vy: s[9],
            vz: s[10],
            var_vx: c[(0, 0)],
            var_vy: c[(1, 1)],
            var_vz: c[(2, 2)],
        }
    }

    pub fn bbox(&self) -> Box3 {
        Box3 {
            center: Vector3::new(self.cx, self.cy, self.cz),
            yaw: self.yaw,
            dims: Vector3::new(self.l, self.w, self.h),
        }
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }
}

pub fn write_tracks_csv(path: &Path, rows: &[TrackRow]) -> Result<()> {
    let mut s = format!("{TRACKS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.frame,
            r.stamp,
            r.track_id,
            r.cx,
            r.cy,
            r.cz,
            r.yaw,
            r.l,
            r.w,
            r.h,
            r.score,
            r.vx,
            r.vy,
            r.vz,
            r.var_vx,
            r.var_vy,
            r.var_vz
        );
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_tracks_csv(path: &Path) -> Result<Vec<TrackRow>> {
    crate::sim::read_csv(path, TRACKS_HEADER)
}
