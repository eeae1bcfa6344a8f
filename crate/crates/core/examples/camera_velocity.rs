//! Object velocity from image feature flow.
//!
//! RANSAC finds the dominant flow among feature tracks (some of them
//! outliers), lidar supplies the depth, and the result is lifted to a global
//! velocity.

use scanfuse::camera_velocity::{
    camera_velocity_to_global, flow_stats, flow_to_camera_velocity, object_depth, DepthEstimator,
};
use scanfuse::egomotion::undistort_ego;
use scanfuse::geom::frame_velocity;
use scanfuse::sim::{simulate, Scenario};

fn main() -> scanfuse::Result<()> {
    let s = Scenario::builtin("tangential")?;
    let ds = simulate(&s, 5)?;
    let cam = &ds.manifest.camera;
    let dt = ds.manifest.frame_duration;
    let k = 4;
    let frame = &ds.frames[k];

    let tracks = &ds.tracks[k];
    let flow = flow_stats(tracks, dt, 2.0, 200, 11)?;
    println!(
        "{} tracks, {} inliers, flow [{:.1}, {:.1}] px/s",
        tracks.len(),
        flow.inlier_count,
        flow.mean.x,
        flow.mean.y
    );

    let points: Vec<_> = undistort_ego(frame)?.into_iter().filter(|p| p.object_id == Some(1)).collect();
    let center = points.iter().map(|p| p.position).sum::<nalgebra::Vector3<f64>>() / points.len() as f64;
    let sensor = frame.ego_pose_start;
    let depth = object_depth(&points, &cam.global_pose(&sensor).translation, DepthEstimator::Median)?;
    let rel = flow_to_camera_velocity(&flow, depth, cam)?;
    let (lin, ang) = frame_velocity(&frame.ego_pose_start, &frame.ego_pose_end)?;
    let v = camera_velocity_to_global(&rel, &sensor, cam, &lin, &ang, &center);

    println!("depth {depth:.2} m");
    println!("camera velocity [{:+.2}, {:+.2}, {:+.2}], truth {:?}", v.mean.x, v.mean.y, v.mean.z, s.objects[0].velocity.as_slice());
    println!("the camera cannot see motion along its axis: var_x = {:.1e}", v.cov[(0, 0)]);
    Ok(())
}
