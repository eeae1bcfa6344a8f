//! Rigid-body geometry shared by every other module.
//!
//! Rotations are plain 3×3 orthonormal matrices. Pose interpolation follows the
//! constant-velocity model used for ego-motion removal: the relative rotation
//! between two key poses is scaled along its geodesic, and the relative
//! translation is scaled linearly in the frame of the first pose.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when validating orthonormality of user-supplied rotations.
const ORTHONORMAL_TOL: f64 = 1e-9;

/// Axis length tolerance accepted by [`rodrigues_exp`].
const AXIS_UNIT_TOL: f64 = 1e-6;

/// Above this angle the log map switches to the symmetric-part eigenvector.
const NEAR_PI: f64 = PI - 1e-3;

/// Skew-symmetric cross-product matrix of `v`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps `m` after checking `mᵀm = I` and `det(m) = 1`.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let gram = m.transpose() * m - Matrix3::identity();
        if gram.amax() > ORTHONORMAL_TOL || (m.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "matrix is not a rotation (|mᵀm - I| = {:.3e}, det = {})",
                gram.amax(),
                m.determinant()
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without validation. The caller guarantees orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation of `angle` radians about +z.
    pub fn from_yaw(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rotation(*q.to_rotation_matrix().matrix())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(self.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Rotation as a unit axis and an angle in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    pub axis: Vector3<f64>,
    pub angle: f64,
}

impl AxisAngle {
    pub fn new(axis: Vector3<f64>, angle: f64) -> Self {
        AxisAngle { axis, angle }
    }

    /// Builds the axis-angle pair from a rotation vector `ω̂θ`.
    pub fn from_rotation_vector(w: &Vector3<f64>) -> Self {
        let angle = w.norm();
        if angle == 0.0 {
            AxisAngle::new(Vector3::z(), 0.0)
        } else {
            AxisAngle::new(w / angle, angle)
        }
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.axis * self.angle
    }
}

/// Rodrigues formula: `I + [ω̂]ₓ sinθ + [ω̂]ₓ² (1 − cosθ)`.
pub fn rodrigues_exp(aa: &AxisAngle) -> Result<Rotation> {
    let n = aa.axis.norm();
    if (n - 1.0).abs() > AXIS_UNIT_TOL || !aa.angle.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "rotation axis must be unit length (|axis| = {n})"
        )));
    }
    Ok(exp_unit(&aa.axis, aa.angle))
}

fn exp_unit(axis: &Vector3<f64>, angle: f64) -> Rotation {
    let k = skew(axis);
    let (s, c) = angle.sin_cos();
    Rotation(Matrix3::identity() + k * s + k * k * (1.0 - c))
}

/// Inverse of [`rodrigues_exp`], with the angle in `[0, π]`.
///
/// The identity maps to `(+z, 0)`. Near `θ = π` the axis is read from the
/// symmetric part `(R + Rᵀ)/2 − cosθ·I = (1 − cosθ) ω̂ω̂ᵀ`.
pub fn rodrigues_log(r: &Rotation) -> AxisAngle {
    let m = r.0;
    let w = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5;
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = w.norm();
    let angle = sin.atan2(cos);

    if angle <= f64::EPSILON {
        return AxisAngle::new(Vector3::z(), 0.0);
    }
    if angle < NEAR_PI {
        return AxisAngle::new(w / sin, angle);
    }

    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let col = (0..3)
        .max_by(|&a, &b| sym.column(a).norm().total_cmp(&sym.column(b).norm()))
        .unwrap();
    let mut axis: Vector3<f64> = sym.column(col).normalize();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    AxisAngle::new(axis, angle)
}

/// Sensor pose in the global frame at an absolute timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRepr", try_from = "PoseRepr")]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub stamp: f64,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>, stamp: f64) -> Self {
        Pose {
            rotation,
            translation,
            stamp,
        }
    }

    pub fn identity(stamp: f64) -> Self {
        Pose::new(Rotation::identity(), Vector3::zeros(), stamp)
    }

    /// Maps a point from this pose's local frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Maps a parent-frame point into this pose's local frame.
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose().rotate(&(p - self.translation))
    }

    /// `self ∘ child`: the pose of a frame given relative to this one. Keeps `self.stamp`.
    pub fn compose(&self, child: &Pose) -> Pose {
        Pose::new(
            self.rotation * child.rotation,
            self.rotation.rotate(&child.translation) + self.translation,
            self.stamp,
        )
    }
}

fn relative_motion(p0: &Pose, p1: &Pose) -> (AxisAngle, Vector3<f64>) {
    let rel_rot = p0.rotation.transpose() * p1.rotation;
    let rel_trans = p0.rotation.transpose().rotate(&(p1.translation - p0.translation));
    (rodrigues_log(&rel_rot), rel_trans)
}

/// Global pose at `t` under constant sensor-frame velocity between `p0` and `p1`.
pub fn interpolate_pose(p0: &Pose, p1: &Pose, t: f64) -> Result<Pose> {
    let span = p1.stamp - p0.stamp;
    if !(span > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pose stamps must increase ({} -> {})",
            p0.stamp, p1.stamp
        )));
    }
    let slack = 1e-9 * p1.stamp.abs().max(1.0);
    if !(t >= p0.stamp - slack && t <= p1.stamp + slack) {
        return Err(Error::OutOfRange(format!(
            "t = {t} outside [{}, {}]",
            p0.stamp, p1.stamp
        )));
    }
    if t == p0.stamp {
        return Ok(*p0);
    }
    let s = ((t - p0.stamp) / span).clamp(0.0, 1.0);
    let (aa, rel_trans) = relative_motion(p0, p1);
    let rot = p0.rotation * exp_unit(&aa.axis, aa.angle * s);
    let trans = p0.rotation.rotate(&(rel_trans * s)) + p0.translation;
    Ok(Pose::new(rot, trans, t))
}

/// Serialized form of a pose: unit quaternion `[w, x, y, z]` plus translation.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    #[serde(default)]
    stamp: f64,
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.rotation.to_quaternion();
        PoseRepr {
            stamp: p.stamp,
            rotation: [q.w, q.i, q.j, q.k],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = String;
    fn try_from(r: PoseRepr) -> Result<Self, String> {
        let [w, x, y, z] = r.rotation;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(format!("rotation quaternion is not unit length (|q| = {})", q.norm()));
        }
        Ok(Pose::new(
            Rotation::from_quaternion(&UnitQuaternion::new_normalize(q)),
            Vector3::from(r.translation),
            r.stamp,
        ))
    }
}

/// Constant global-frame linear and angular velocity implied by two key poses.
pub fn frame_velocity(p0: &Pose, p1: &Pose) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let span = p1.stamp - p0.stamp;
    if !(span > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pose stamps must increase ({} -> {})",
            p0.stamp, p1.stamp
        )));
    }
    let (aa, _) = relative_motion(p0, p1);
    let linear = (p1.translation - p0.translation) / span;
    let angular = p0.rotation.rotate(&aa.rotation_vector()) / span;
    Ok((linear, angular))
}

/// Right-handed orthonormal triad aligned with the sensor-to-object ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialBasis {
    pub radial: Vector3<f64>,
    /// Azimuthal direction, `normalize(radial × up)`.
    pub tangential_1: Vector3<f64>,
    /// Polar direction, `radial × tangential_1`.
    pub tangential_2: Vector3<f64>,
}

impl RadialBasis {
    /// Rows are (radial, tangential_1, tangential_2); maps global vectors into the basis.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[
            self.radial.transpose(),
            self.tangential_1.transpose(),
            self.tangential_2.transpose(),
        ])
    }

    pub fn tangential_rows(&self) -> nalgebra::Matrix2x3<f64> {
        nalgebra::Matrix2x3::from_rows(&[self.tangential_1.transpose(), self.tangential_2.transpose()])
    }
}

/// Radial/tangential basis for an object seen from `sensor_origin_global`, with +z as up.
pub fn radial_basis(
    object_center_global: &Vector3<f64>,
    sensor_origin_global: &Vector3<f64>,
) -> Result<RadialBasis> {
    let d = object_center_global - sensor_origin_global;
    let dist = d.norm();
    if !(dist > 1e-3) {
        return Err(Error::DegenerateGeometry(format!(
            "object center within {dist:.2e} m of the sensor origin"
        )));
    }
    let radial = d / dist;
    let mut aux = radial.cross(&Vector3::z());
    if aux.norm() < 1e-6 {
        aux = radial.cross(&Vector3::x());
    }
    let tangential_1 = aux.normalize();
    let tangential_2 = radial.cross(&tangential_1);
    Ok(RadialBasis {
        radial,
        tangential_1,
        tangential_2,
    })
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            .normalize();
        exp_unit(&axis, rng.gen_range(0.0..PI))
    }

    /// Matrix exponential by truncated Taylor series.
    fn taylor_exp(a: &Matrix3<f64>, terms: usize) -> Matrix3<f64> {
        let mut sum = Matrix3::identity();
        let mut term = Matrix3::identity();
        for k in 1..terms {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn exp_zero_angle_is_identity() {
        let r = rodrigues_exp(&AxisAngle::new(Vector3::z(), 0.0)).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = rodrigues_exp(&AxisAngle::new(Vector3::z(), FRAC_PI_2)).unwrap();
        assert_relative_eq!(r.rotate(&Vector3::x()), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn exp_matches_taylor_series() {
        let axis = Vector3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        let r = rodrigues_exp(&AxisAngle::new(axis, 0.3)).unwrap();
        let oracle = taylor_exp(&(skew(&axis) * 0.3), 20);
        assert!((r.matrix() - oracle).amax() < 1e-9);
    }

    #[test]
    fn exp_rejects_non_unit_axis() {
        let err = rodrigues_exp(&AxisAngle::new(Vector3::new(1.0, 1.0, 0.0), 0.2)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn log_identity_convention() {
        let aa = rodrigues_log(&Rotation::identity());
        assert_eq!(aa.axis, Vector3::z());
        assert_eq!(aa.angle, 0.0);
    }

    #[test]
    fn log_about_x() {
        let r = exp_unit(&Vector3::x(), 0.5);
        let aa = rodrigues_log(&r);
        assert_relative_eq!(aa.axis, Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(aa.angle, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn log_at_pi() {
        let axis = Vector3::new(0.0, 3.0, 4.0) / 5.0;
        let r = exp_unit(&axis, PI);
        let aa = rodrigues_log(&r);
        assert_relative_eq!(aa.angle, PI, epsilon = 1e-9);
        assert!((aa.axis - axis).norm() < 1e-9 || (aa.axis + axis).norm() < 1e-9);
        assert!((exp_unit(&aa.axis, aa.angle).matrix() - r.matrix()).amax() < 1e-9);
    }

    #[test]
    fn exp_log_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let aa = rodrigues_log(&r);
            assert!(aa.angle >= 0.0 && aa.angle <= PI);
            let back = rodrigues_exp(&aa).unwrap();
            assert!((back.matrix() - r.matrix()).amax() < 1e-7);
        }
    }

    #[test]
    fn exp_times_negative_exp_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                .normalize();
            let theta = rng.gen_range(0.0..PI);
            let prod = exp_unit(&axis, theta) * exp_unit(&axis, -theta);
            assert!((prod.matrix() - Matrix3::identity()).amax() < 1e-9);
        }
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let p0 = Pose::identity(0.0);
        let p1 = Pose::new(Rotation::from_yaw(FRAC_PI_2), Vector3::new(1.0, 0.0, 0.0), 1.0);
        assert_eq!(interpolate_pose(&p0, &p1, 0.0).unwrap(), p0);
        let end = interpolate_pose(&p0, &p1, 1.0).unwrap();
        assert!((end.rotation.matrix() - p1.rotation.matrix()).amax() < 1e-9);
        assert!((end.translation - p1.translation).amax() < 1e-9);
        let mid = interpolate_pose(&p0, &p1, 0.5).unwrap();
        assert!((mid.rotation.matrix() - Rotation::from_yaw(FRAC_PI_2 / 2.0).matrix()).amax() < 1e-12);
        assert_relative_eq!(mid.translation, Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn interpolate_rejects_bad_inputs() {
        let p0 = Pose::identity(1.0);
        let p1 = Pose::identity(2.0);
        assert!(matches!(interpolate_pose(&p0, &p1, 2.5), Err(Error::OutOfRange(_))));
        assert!(matches!(interpolate_pose(&p1, &p0, 1.5), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn interpolated_angle_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p0 = Pose::new(random_rotation(&mut rng), Vector3::new(1.0, 2.0, 3.0), 0.0);
        let p1 = Pose::new(random_rotation(&mut rng), Vector3::new(-1.0, 0.0, 2.0), 0.1);
        let mut last = -1.0;
        for k in 0..=50 {
            let t = 0.1 * k as f64 / 50.0;
            let p = interpolate_pose(&p0, &p1, t).unwrap();
            let angle = rodrigues_log(&(p0.rotation.transpose() * p.rotation)).angle;
            assert!(angle >= last - 1e-12);
            last = angle;
        }
    }

    #[test]
    fn interpolation_matches_expanded_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let p0 = Pose::new(random_rotation(&mut rng), Vector3::new(rng.gen(), rng.gen(), rng.gen()), 2.0);
            let p1 = Pose::new(random_rotation(&mut rng), Vector3::new(rng.gen(), rng.gen(), rng.gen()), 2.1);
            let t = rng.gen_range(2.0..2.1);
            let local = Vector3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen());
            let via_pose = interpolate_pose(&p0, &p1, t).unwrap().transform_point(&local);

            // R_t0 R_{t0,ti} P' + R_t0 T_{t0,ti} + T_t0, with each factor built by hand.
            let s = (t - 2.0) / 0.1;
            let rel = p0.rotation.transpose() * p1.rotation;
            let aa = rodrigues_log(&rel);
            let r_rel = rodrigues_exp(&AxisAngle::new(aa.axis, aa.angle * s)).unwrap();
            let t_rel = p0.rotation.transpose().rotate(&(p1.translation - p0.translation)) * s;
            let expanded = p0.rotation.rotate(&r_rel.rotate(&local)) + p0.rotation.rotate(&t_rel) + p0.translation;
            assert!((via_pose - expanded).amax() < 1e-9);
        }
    }

    #[test]
    fn radial_basis_axis_aligned() {
        let b = radial_basis(&Vector3::new(10.0, 0.0, 0.0), &Vector3::zeros()).unwrap();
        assert_relative_eq!(b.radial, Vector3::x());
        assert_relative_eq!(b.tangential_1, Vector3::new(0.0, -1.0, 0.0));
        assert_relative_eq!(b.tangential_2, Vector3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn radial_basis_overhead_uses_fallback() {
        let b = radial_basis(&Vector3::new(0.0, 0.0, 10.0), &Vector3::zeros()).unwrap();
        let m = b.matrix();
        assert!((m * m.transpose() - Matrix3::identity()).amax() < 1e-12);
        assert_relative_eq!(b.radial.cross(&b.tangential_1), b.tangential_2, epsilon = 1e-12);
    }

    #[test]
    fn radial_basis_degenerate() {
        let err = radial_basis(&Vector3::new(1.0, 1.0, 1.0), &Vector3::new(1.0, 1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }

    #[test]
    fn radial_basis_random_triads_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let c = Vector3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-5.0..5.0));
            let o = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let b = radial_basis(&c, &o).unwrap();
            let m = b.matrix();
            assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn frame_velocity_of_yawing_pose() {
        let p0 = Pose::identity(0.0);
        let p1 = Pose::new(Rotation::from_yaw(0.03), Vector3::new(0.5, 0.0, 0.0), 0.1);
        let (lin, ang) = frame_velocity(&p0, &p1).unwrap();
        assert_relative_eq!(lin, Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(ang, Vector3::new(0.0, 0.0, 0.3), epsilon = 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-PI), PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.5), 0.5);
    }
}
