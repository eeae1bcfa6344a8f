//! Ego-motion removal: every point is mapped to the global frame with the
//! sensor pose interpolated at its own timestamp.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::interpolate_pose;
use crate::sim::RawFrame;

/// A lidar return in the global frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalPoint {
    pub position: Vector3<f64>,
    pub stamp: f64,
    pub object_id: Option<i64>,
}

/// `P = R(t_i)·P' + T(t_i)` for every point of `frame`.
pub fn undistort_ego(frame: &RawFrame) -> Result<Vec<GlobalPoint>> {
    let (p0, p1) = (&frame.ego_pose_start, &frame.ego_pose_end);
    if p0.stamp != frame.start_stamp {
        return Err(Error::MisalignedInput(format!(
            "frame {} starts at {} but its first pose is at {}",
            frame.index, frame.start_stamp, p0.stamp
        )));
    }
    frame
        .points
        .iter()
        .map(|p| {
            if !(p.stamp >= p0.stamp && p.stamp <= p1.stamp) {
                return Err(Error::OutOfRange(format!(
                    "point stamp {} outside frame [{}, {}]",
                    p.stamp, p0.stamp, p1.stamp
                )));
            }
            let pose = interpolate_pose(p0, p1, p.stamp)?;
            Ok(GlobalPoint {
                position: pose.transform_point(&p.position),
                stamp: p.stamp,
                object_id: p.object_id,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose, Rotation};
    use crate::sim::TimedPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(p0: Pose, p1: Pose, points: Vec<TimedPoint>) -> RawFrame {
        RawFrame {
            index: 0,
            start_stamp: p0.stamp,
            points,
            ego_pose_start: p0,
            ego_pose_end: p1,
        }
    }

    fn pt(x: f64, y: f64, z: f64, stamp: f64) -> TimedPoint {
        TimedPoint {
            position: Vector3::new(x, y, z),
            stamp,
            object_id: Some(2),
        }
    }

    #[test]
    fn identity_ego_is_identity_map() {
        let pts = vec![pt(1.0, 2.0, 3.0, 0.01), pt(-4.0, 0.5, 0.0, 0.09)];
        let out = undistort_ego(&frame(Pose::identity(0.0), Pose::identity(0.1), pts.clone())).unwrap();
        for (o, p) in out.iter().zip(&pts) {
            assert_eq!(o.position, p.position);
            assert_eq!(o.stamp, p.stamp);
            assert_eq!(o.object_id, p.object_id);
        }
    }

    #[test]
    fn translating_ego_shifts_by_elapsed_motion() {
        let p1 = Pose::new(Rotation::identity(), Vector3::new(1.0, 0.0, 0.0), 0.1);
        let out = undistort_ego(&frame(Pose::identity(0.0), p1, vec![pt(5.0, 0.0, 0.0, 0.05)])).unwrap();
        assert!((out[0].position - Vector3::new(5.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotating_ego_matches_direct_evaluation() {
        // Straight-line evaluation: yaw grows linearly, translation linearly in the start frame.
        let t_end = Vector3::new(0.8, 0.3, 0.0);
        let p0 = Pose::new(Rotation::from_yaw(0.4), Vector3::new(3.0, -1.0, 0.5), 1.0);
        let p1 = Pose::new(Rotation::from_yaw(0.6), p0.translation + p0.rotation.rotate(&t_end), 1.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<TimedPoint> = (0..200)
            .map(|_| {
                pt(
                    rng.gen_range(-30.0..30.0),
                    rng.gen_range(-30.0..30.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(1.0..1.1),
                )
            })
            .collect();
        let out = undistort_ego(&frame(p0, p1, pts.clone())).unwrap();
        for (o, p) in out.iter().zip(&pts) {
            let s = (p.stamp - 1.0) / 0.1;
            let yaw = 0.4 + 0.2 * s;
            let (c, sn) = (yaw.cos(), yaw.sin());
            let q = p.position;
            let rotated = Vector3::new(c * q.x - sn * q.y, sn * q.x + c * q.y, q.z);
            let want = rotated + p0.translation + p0.rotation.rotate(&(t_end * s));
            assert!((o.position - want).norm() < 1e-9);
        }
    }

    #[test]
    fn second_pass_with_identity_poses_changes_nothing() {
        let p1 = Pose::new(Rotation::from_yaw(0.1), Vector3::new(1.0, 0.5, 0.0), 0.1);
        let pts = vec![pt(5.0, 1.0, 0.0, 0.02), pt(7.0, -1.0, 0.3, 0.08)];
        let once = undistort_ego(&frame(Pose::identity(0.0), p1, pts)).unwrap();
        let again_in: Vec<TimedPoint> = once
            .iter()
            .map(|g| TimedPoint {
                position: g.position,
                stamp: g.stamp,
                object_id: g.object_id,
            })
            .collect();
        let twice = undistort_ego(&frame(Pose::identity(0.0), Pose::identity(0.1), again_in)).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn stamp_outside_frame_is_rejected() {
        let err = undistort_ego(&frame(Pose::identity(0.0), Pose::identity(0.1), vec![pt(1.0, 0.0, 0.0, 0.2)]));
        assert!(matches!(err, Err(Error::OutOfRange(_))));
    }

    #[test]
    fn static_surface_recovered_under_ego_motion() {
        use crate::sim::{generate_frame, EgoMotion, ScanPatternConfig, SimObject};
        let ego = EgoMotion {
            speed: 8.0,
            yaw_rate: 0.5,
            ..EgoMotion::default()
        }
        .trajectory(2, 0.1)
        .unwrap();
        let wall = SimObject {
            id: 1,
            half_extents: Vector3::new(0.5, 8.0, 2.0),
            center0: Vector3::new(15.0, 0.0, 0.75),
            yaw: 0.0,
            velocity: Vector3::zeros(),
        };
        let cfg = ScanPatternConfig {
            range_noise_sigma: 0.0,
            points_per_frame: 3000,
            ..ScanPatternConfig::default()
        };
        let f = generate_frame(std::slice::from_ref(&wall), &ego, &cfg, 1, 4, None).unwrap();
        let out = undistort_ego(&f).unwrap();
        assert!(out.len() > 100);
        assert!(out.iter().all(|g| wall.surface_distance(&g.position, g.stamp) < 1e-9));
    }
}
