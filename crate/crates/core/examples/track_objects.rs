//! Multi-object tracking with a constant-velocity Kalman filter.
//!
//! Two boxes pass each other in adjacent lanes; one detection is missing for a frame. Track IDs
//! survive both.

use nalgebra::{Matrix3, Vector3};
use scanfuse::camera_velocity::{FrameTag, VelocityGaussian};
use scanfuse::fusion_tracking::{Box3, Detection, Tracker, TrackerConfig};

fn detection(center: Vector3<f64>, v: Vector3<f64>) -> Detection {
    Detection {
        bbox: Box3 {
            center,
            yaw: 0.0,
            dims: Vector3::new(4.5, 1.8, 1.5),
        },
        score: 1.0,
        velocity: VelocityGaussian::new(v, Matrix3::identity() * 0.04, FrameTag::Fused),
    }
}

fn main() -> scanfuse::Result<()> {
    let dt = 0.1;
    let mut tracker = Tracker::new(TrackerConfig::default());
    let va = Vector3::new(8.0, 0.0, 0.0);
    let vb = Vector3::new(-6.0, 0.0, 0.0);

    for k in 0..15 {
        let t = k as f64 * dt;
        let mut dets = vec![detection(Vector3::new(0.0, 0.0, 0.0) + va * t, va)];
        if k != 7 {
            dets.push(detection(Vector3::new(12.0, 3.0, 0.0) + vb * t, vb));
        }
        let reports = tracker.step(&dets, dt)?;
        let line: Vec<String> = reports
            .iter()
            .map(|r| {
                let c = r.track.bbox().center;
                format!("#{} at ({:5.2}, {:4.2}) vx {:+.2}", r.track.id, c.x, c.y, r.track.velocity().x)
            })
            .collect();
        println!("frame {k:2}: {}", line.join("   "));
    }
    Ok(())
}
