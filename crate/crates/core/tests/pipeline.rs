//! Library-level pipeline behaviour across module boundaries.

use nalgebra::Vector3;
use scanfuse::cli::{run_dataset, Mode, PipelineConfig};
use scanfuse::sim::{export_dataset, load_dataset, simulate, Scenario, SimObject};

fn small(name: &str, frames: usize, seed: u64) -> scanfuse::sim::Dataset {
    let mut s = Scenario::builtin(name).unwrap();
    s.frames = frames;
    s.scan.points_per_frame = 8000;
    simulate(&s, seed).unwrap()
}

#[test]
fn exported_dataset_runs_like_the_in_memory_one() {
    let ds = small("turning", 5, 2);
    let tmp = tempfile::TempDir::new().unwrap();
    export_dataset(&ds, tmp.path()).unwrap();
    let back = load_dataset(tmp.path()).unwrap();
    let cfg = PipelineConfig::default();
    let a = run_dataset(&ds, &cfg).unwrap();
    let b = run_dataset(&back, &cfg).unwrap();
    assert_eq!(a.tracks.len(), b.tracks.len());
    for (x, y) in a.measurements.iter().zip(&b.measurements) {
        assert!((x.velocity() - y.velocity()).norm() < 1e-6);
    }
}

#[test]
fn output_frames_keep_input_order() {
    let ds = small("tangential", 6, 4);
    let run = run_dataset(&ds, &PipelineConfig::default()).unwrap();
    assert_eq!(run.corrected.len(), ds.frames.len());
    let frames: Vec<usize> = run.tracks.iter().map(|t| t.frame).collect();
    assert!(frames.windows(2).all(|w| w[0] <= w[1]));
    assert!(frames.iter().all(|&f| f < ds.frames.len()));
    for (k, cloud) in run.corrected.iter().enumerate() {
        assert_eq!(cloud.len(), ds.frames[k].points.len());
    }
}

#[test]
fn modes_differ_only_after_fusion() {
    let ds = small("tangential", 5, 6);
    let fused = run_dataset(&ds, &PipelineConfig::default()).unwrap();
    let lidar = run_dataset(
        &ds,
        &PipelineConfig {
            mode: Mode::LidarOnly,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(fused.measurements.len(), lidar.measurements.len());
    for (f, l) in fused.measurements.iter().zip(&lidar.measurements) {
        assert!((f.radial_speed - l.radial_speed).abs() <= 1e-9);
        assert_eq!(f.lidar_velocity(), l.lidar_velocity());
    }
    assert!(fused.measurements.iter().any(|m| m.camera_used == 1));
    assert!(lidar.measurements.iter().all(|m| m.camera_used == 0));
}

#[test]
fn object_driving_out_of_view_does_not_break_the_run() {
    let mut s = Scenario::builtin("tangential").unwrap();
    s.frames = 12;
    s.scan.points_per_frame = 8000;
    // Leaves the 82° field of view sideways after a few frames.
    s.objects = vec![SimObject {
        id: 1,
        half_extents: Vector3::new(2.25, 0.9, 0.75),
        center0: Vector3::new(8.0, 4.0, 0.75),
        yaw: std::f64::consts::FRAC_PI_2,
        velocity: Vector3::new(0.0, 12.0, 0.0),
    }];
    let ds = simulate(&s, 1).unwrap();
    let last_seen = ds
        .frames
        .iter()
        .rposition(|f| f.points.iter().any(|p| p.object_id == Some(1)))
        .unwrap();
    assert!(last_seen < ds.frames.len() - 1, "object never left the view");
    let run = run_dataset(&ds, &PipelineConfig::default()).unwrap();
    assert!(run.tracks.iter().all(|t| t.frame <= last_seen));
    assert!(run.tracks.iter().all(|t| t.track_id == run.tracks[0].track_id));
}
