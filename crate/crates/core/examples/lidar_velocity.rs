//! Estimate an object's velocity from the motion blur in one lidar frame.

use scanfuse::egomotion::undistort_ego;
use scanfuse::lidar_velocity::{build_voxels, estimate_velocity, LidarWeights, ObjectObservation};
use scanfuse::sim::{simulate, Scenario};

fn main() -> scanfuse::Result<()> {
    let s = Scenario::builtin("radial")?;
    let ds = simulate(&s, 3)?;
    let truth = s.objects[0].velocity;

    for k in [0, 5, 10, 15] {
        let frame = &ds.frames[k];
        // Ground-truth labels stand in for a detector here.
        let points: Vec<_> = undistort_ego(frame)?.into_iter().filter(|p| p.object_id == Some(1)).collect();
        let obs = ObjectObservation::new(points, frame.start_stamp)?;
        let grid = build_voxels(&obs, 0.5)?;
        let v = estimate_velocity(&obs, &grid, &LidarWeights::default())?;
        println!(
            "frame {k:2}: {} pts, v = [{:+.2}, {:+.2}, {:+.2}] (truth [{:+.2}, {:+.2}, {:+.2}]), var_x {:.3}",
            obs.len(),
            v.mean.x,
            v.mean.y,
            v.mean.z,
            truth.x,
            truth.y,
            truth.z,
            v.cov[(0, 0)]
        );
    }
    Ok(())
}
