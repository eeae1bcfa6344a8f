//! Combine lidar and camera velocities along the sensor-to-object ray.
//!
//! Lidar owns the radial component. The tangential part is a
//! covariance-weighted blend of both sensors.

use nalgebra::Vector3;
use scanfuse::camera_velocity::{
    camera_velocity_to_global, flow_stats, flow_to_camera_velocity, object_depth, DepthEstimator,
};
use scanfuse::egomotion::undistort_ego;
use scanfuse::fusion_tracking::{camera_on_ray, fuse, project_gaussian};
use scanfuse::geom::{frame_velocity, radial_basis};
use scanfuse::lidar_velocity::{build_voxels, estimate_velocity, LidarWeights, ObjectObservation};
use scanfuse::sim::{simulate, Scenario};

fn main() -> scanfuse::Result<()> {
    let s = Scenario::builtin("tangential")?;
    let ds = simulate(&s, 2)?;
    let truth = s.objects[0].velocity;
    let cam = &ds.manifest.camera;

    println!("frame  lidar err  fused err");
    for k in 2..8 {
        let frame = &ds.frames[k];
        let sensor = frame.ego_pose_start;
        let points: Vec<_> = undistort_ego(frame)?.into_iter().filter(|p| p.object_id == Some(1)).collect();
        let center = points.iter().map(|p| p.position).sum::<Vector3<f64>>() / points.len() as f64;

        let obs = ObjectObservation::new(points.clone(), frame.start_stamp)?;
        let lidar = estimate_velocity(&obs, &build_voxels(&obs, 0.5)?, &LidarWeights::default())?;

        let flow = flow_stats(&ds.tracks[k], ds.manifest.frame_duration, 2.0, 200, k as u64)?;
        let depth = object_depth(&points, &cam.global_pose(&sensor).translation, DepthEstimator::Median)?;
        let (lin, ang) = frame_velocity(&frame.ego_pose_start, &frame.ego_pose_end)?;
        let camera = camera_velocity_to_global(&flow_to_camera_velocity(&flow, depth, cam)?, &sensor, cam, &lin, &ang, &center);

        let basis = radial_basis(&center, &sensor.translation)?;
        let lidar_dir = project_gaussian(&lidar, &basis);
        let axis = (sensor.rotation * cam.pose_in_sensor.rotation).rotate(&Vector3::z());
        let camera_dir = camera_on_ray(&camera, &axis, &basis, lidar_dir.radial_mean, lidar_dir.radial_var)?;
        let fused = fuse(&lidar_dir, &camera_dir)?;

        println!(
            "{k:5}  {:9.3}  {:9.3}",
            (lidar.mean - truth).norm(),
            (fused.velocity.mean - truth).norm()
        );
    }
    Ok(())
}
