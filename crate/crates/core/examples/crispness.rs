//! Score how sharp a moving object's point cloud is before and after motion
//! correction.

use scanfuse::egomotion::undistort_ego;
use scanfuse::evaluation::{crispness, undistort_object, CrispnessConfig};
use scanfuse::sim::{simulate, Scenario};

fn main() -> scanfuse::Result<()> {
    let mut s = Scenario::builtin("radial")?;
    s.frames = 3;
    s.objects[0].velocity *= 3.0;
    let ds = simulate(&s, 9)?;
    let v = s.objects[0].velocity;
    let t0 = ds.frames[0].start_stamp;
    let cfg = CrispnessConfig::default();

    let mut raw = Vec::new();
    let mut corrected = Vec::new();
    for frame in &ds.frames {
        let pts: Vec<_> = undistort_ego(frame)?.into_iter().filter(|p| p.object_id == Some(1)).collect();
        corrected.push(undistort_object(&pts, &v, t0).into_iter().map(|p| p.position).collect());
        raw.push(pts.into_iter().map(|p| p.position).collect());
    }

    println!("sigma {} m, cutoff {} m", cfg.sigma, cfg.cutoff());
    println!("uncorrected {:.4}", crispness(&raw, &cfg)?);
    println!("corrected   {:.4}", crispness(&corrected, &cfg)?);
    Ok(())
}
