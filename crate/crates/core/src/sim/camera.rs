use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EgoTrajectory, SimObject};
use crate::error::{Error, Result};
use crate::geom::{frame_velocity, Pose, Rotation};

/// Pinhole camera. Camera axes: x along image u (right), y along image v (down), z optical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub f_theta: f64,
    pub f_phi: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// Camera pose relative to the lidar sensor frame.
    pub pose_in_sensor: Pose,
}

impl Default for CameraModel {
    /// 1520×568 camera looking along the lidar boresight, co-located with the lidar.
    fn default() -> Self {
        CameraModel {
            f_theta: 1000.0,
            f_phi: 1000.0,
            cx: 760.0,
            cy: 284.0,
            width: 1520.0,
            height: 568.0,
            pose_in_sensor: Pose::new(Self::forward_looking(), Vector3::zeros(), 0.0),
        }
    }
}

impl CameraModel {
    /// Camera-to-sensor rotation for an optical axis along sensor +x with image up along sensor +z.
    pub fn forward_looking() -> Rotation {
        Rotation::from_matrix_unchecked(Matrix3::new(
            0.0, 0.0, 1.0, //
            -1.0, 0.0, 0.0, //
            0.0, -1.0, 0.0,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.f_theta > 0.0 && self.f_phi > 0.0) {
            problems.push("camera focal lengths must be > 0".to_string());
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            problems.push("camera image size must be > 0".to_string());
        }
        if !(self.contains(&Vector2::new(self.cx, self.cy))) {
            problems.push("camera principal point must lie inside the image".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x <= self.width && px.y >= 0.0 && px.y <= self.height
    }

    /// Global camera pose for a given sensor pose.
    pub fn global_pose(&self, sensor_pose: &Pose) -> Pose {
        sensor_pose.compose(&self.pose_in_sensor)
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        (p_cam.z > 1e-9).then(|| {
            Vector2::new(
                self.cx + self.f_theta * p_cam.x / p_cam.z,
                self.cy + self.f_phi * p_cam.y / p_cam.z,
            )
        })
    }
}

/// A tracked image feature on one object between two frame boundaries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureTrack {
    pub object_id: i64,
    pub pixel_t0: Vector2<f64>,
    pub pixel_t1: Vector2<f64>,
    pub is_outlier: bool,
}

/// Samples a point uniformly by area on the faces of `obj` visible from `eye` at time `t`.
fn visible_faces(obj: &SimObject, eye: &Vector3<f64>, t: f64) -> Vec<(usize, f64, f64)> {
    let center = obj.center_at(t);
    let rot = obj.orientation();
    let h = obj.half_extents;
    let mut faces = Vec::new();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut n_local = Vector3::zeros();
            n_local[axis] = sign;
            let normal = rot.rotate(&n_local);
            let face_center = center + normal * h[axis];
            if normal.dot(&(eye - face_center)) > 0.0 {
                let area = 4.0 * h[(axis + 1) % 3] * h[(axis + 2) % 3];
                faces.push((axis, sign, area));
            }
        }
    }
    faces
}

fn sample_on_faces(obj: &SimObject, faces: &[(usize, f64, f64)], t: f64, rng: &mut impl Rng) -> Vector3<f64> {
    let total: f64 = faces.iter().map(|f| f.2).sum();
    let mut pick = rng.gen::<f64>() * total;
    let mut chosen = faces[faces.len() - 1];
    for f in faces {
        if pick < f.2 {
            chosen = *f;
            break;
        }
        pick -= f.2;
    }
    let (axis, sign, _) = chosen;
    let h = obj.half_extents;
    let mut local = Vector3::zeros();
    local[axis] = sign * h[axis];
    let a = (axis + 1) % 3;
    let b = (axis + 2) % 3;
    local[a] = rng.gen_range(-h[a]..=h[a]);
    local[b] = rng.gen_range(-h[b]..=h[b]);
    obj.center_at(t) + obj.orientation().rotate(&local)
}

/// Simulates sparse optical-flow tracks on `obj` between `t0` and `t1`.
///
/// Anchors are sampled on the faces visible from the camera and projected at
/// `t0`. The displacement follows the small-motion model: the anchor's
/// velocity relative to the camera-fixed frame, expressed in camera axes,
/// scaled by `f / d · (t1 − t0)` on the two image axes, where `d` is the mean
/// anchor range (a single depth per object). Both endpoints get
/// isotropic pixel noise; `round(outlier_fraction · n_tracks)` tracks have
/// their second pixel replaced by a uniformly random one.
#[allow(clippy::too_many_arguments)]
pub fn generate_feature_tracks(
    obj: &SimObject,
    cam: &CameraModel,
    ego: &EgoTrajectory,
    t0: f64,
    t1: f64,
    n_tracks: usize,
    outlier_fraction: f64,
    pixel_noise_sigma: f64,
    rng_seed: u64,
) -> Result<Vec<FeatureTrack>> {
    if n_tracks < 1 {
        return Err(Error::InvalidArgument("n_tracks must be >= 1".into()));
    }
    if !(0.0..0.5).contains(&outlier_fraction) {
        return Err(Error::InvalidArgument(format!(
            "outlier_fraction {outlier_fraction} outside [0, 0.5)"
        )));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidArgument("t1 must be after t0".into()));
    }
    let sensor0 = ego.pose_at(t0)?;
    let sensor1 = ego.pose_at(t1)?;
    let (ego_lin, ego_ang) = frame_velocity(&sensor0, &sensor1)?;
    let cam_pose = cam.global_pose(&sensor0);
    let cam_rot_t = cam_pose.rotation.transpose();
    let dt = t1 - t0;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noise = Normal::new(0.0, pixel_noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidArgument(format!("pixel noise: {e}")))?;
    let jitter = |rng: &mut ChaCha8Rng| {
        if pixel_noise_sigma > 0.0 {
            Vector2::new(noise.sample(rng), noise.sample(rng))
        } else {
            Vector2::zeros()
        }
    };

    let faces = visible_faces(obj, &cam_pose.translation, t0);
    let mut anchors = Vec::with_capacity(n_tracks);
    if !faces.is_empty() {
        let max_attempts = 200 * n_tracks;
        let mut attempts = 0;
        while anchors.len() < n_tracks && attempts < max_attempts {
            attempts += 1;
            let anchor = sample_on_faces(obj, &faces, t0, &mut rng);
            let p_cam = cam_pose.inverse_transform_point(&anchor);
            if let Some(px0) = cam.project(&p_cam) {
                anchors.push((anchor, px0));
            }
        }
    }
    // One depth for the whole object, the mean anchor range.
    let depth = anchors.iter().map(|(a, _)| (a - cam_pose.translation).norm()).sum::<f64>() / anchors.len().max(1) as f64;
    let mut tracks = Vec::with_capacity(anchors.len());
    for (anchor, px0) in anchors {
        let v_rel = obj.velocity - (ego_lin + ego_ang.cross(&(anchor - sensor0.translation)));
        let v_cam = cam_rot_t.rotate(&v_rel);
        let flow = Vector2::new(cam.f_theta * v_cam.x, cam.f_phi * v_cam.y) * (dt / depth);
        let p0 = px0 + jitter(&mut rng);
        let p1 = px0 + flow + jitter(&mut rng);
        if !cam.contains(&p0) || !cam.contains(&p1) {
            continue;
        }
        tracks.push(FeatureTrack {
            object_id: obj.id,
            pixel_t0: p0,
            pixel_t1: p1,
            is_outlier: false,
        });
    }
    if tracks.is_empty() {
        log::warn!("object {} is not visible to the camera at t = {t0}", obj.id);
        return Ok(tracks);
    }

    let n_outliers = (outlier_fraction * tracks.len() as f64).round() as usize;
    let picked = rand::seq::index::sample(&mut rng, tracks.len(), n_outliers);
    for i in picked.iter() {
        let tr = &mut tracks[i];
        tr.pixel_t1 = Vector2::new(rng.gen_range(0.0..cam.width), rng.gen_range(0.0..cam.height));
        tr.is_outlier = true;
    }
    Ok(tracks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn static_ego() -> EgoTrajectory {
        EgoTrajectory::new(vec![Pose::identity(0.0), Pose::identity(0.1)]).unwrap()
    }

    fn plate(center: Vector3<f64>, velocity: Vector3<f64>) -> SimObject {
        SimObject {
            id: 3,
            half_extents: Vector3::new(1e-9, 1e-4, 1e-4),
            center0: center,
            yaw: 0.0,
            velocity,
        }
    }

    #[test]
    fn static_scene_has_zero_flow() {
        let obj = SimObject {
            id: 1,
            half_extents: Vector3::new(2.0, 1.0, 0.7),
            center0: Vector3::new(12.0, 1.0, 0.0),
            yaw: 0.4,
            velocity: Vector3::zeros(),
        };
        let tracks =
            generate_feature_tracks(&obj, &CameraModel::default(), &static_ego(), 0.0, 0.1, 50, 0.0, 0.0, 1).unwrap();
        assert_eq!(tracks.len(), 50);
        assert!(tracks.iter().all(|t| t.pixel_t0 == t.pixel_t1 && !t.is_outlier));
    }

    #[test]
    fn lateral_motion_gives_expected_flow() {
        let cam = CameraModel {
            f_theta: 500.0,
            f_phi: 500.0,
            ..CameraModel::default()
        };
        let obj = plate(Vector3::new(10.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0));
        let tracks = generate_feature_tracks(&obj, &cam, &static_ego(), 0.0, 0.1, 20, 0.0, 0.0, 2).unwrap();
        for t in &tracks {
            let flow = t.pixel_t1 - t.pixel_t0;
            // Sensor +y is camera −x (image left).
            assert!((flow.x + 5.0).abs() < 1e-6, "{flow}");
            assert!(flow.y.abs() < 1e-9);
        }
    }

    #[test]
    fn outlier_count_is_exact() {
        let obj = SimObject {
            id: 1,
            half_extents: Vector3::new(2.0, 1.0, 0.7),
            center0: Vector3::new(12.0, 1.0, 0.0),
            yaw: 0.0,
            velocity: Vector3::new(0.0, 3.0, 0.0),
        };
        let tracks =
            generate_feature_tracks(&obj, &CameraModel::default(), &static_ego(), 0.0, 0.1, 100, 0.2, 0.5, 9).unwrap();
        assert_eq!(tracks.len(), 100);
        assert_eq!(tracks.iter().filter(|t| t.is_outlier).count(), 20);
        let cam = CameraModel::default();
        assert!(tracks.iter().all(|t| cam.contains(&t.pixel_t0) && cam.contains(&t.pixel_t1)));
    }

    #[test]
    fn invisible_object_yields_no_tracks() {
        let obj = plate(Vector3::new(-10.0, 0.0, 0.0), Vector3::zeros());
        let tracks =
            generate_feature_tracks(&obj, &CameraModel::default(), &static_ego(), 0.0, 0.1, 10, 0.0, 0.0, 1).unwrap();
        assert!(tracks.is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let obj = plate(Vector3::new(10.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0));
        let cam = CameraModel::default();
        let a = generate_feature_tracks(&obj, &cam, &static_ego(), 0.0, 0.1, 30, 0.1, 0.5, 4).unwrap();
        let b = generate_feature_tracks(&obj, &cam, &static_ego(), 0.0, 0.1, 30, 0.1, 0.5, 4).unwrap();
        assert_eq!(a, b);
    }
}
