//! Synthetic scenes with exact ground truth.
//!
//! A scene is a set of constant-velocity boxes observed by a lidar whose
//! beam follows [`ScanPatternConfig`], mounted on an ego vehicle that moves
//! along an [`EgoTrajectory`]. Every lidar return carries its own timestamp,
//! and a pinhole camera rigidly attached to the sensor emits the feature
//! tracks a sparse optical-flow tracker would produce between frame
//! boundaries.

mod camera;
mod dataset;
pub(crate) use dataset::read_csv;
mod raycast;
mod scan;
mod scenario;

pub use camera::{generate_feature_tracks, CameraModel, FeatureTrack};
pub use dataset::{
    export_dataset, load_dataset, load_manifest, manifest_digest, read_points_csv, write_points_csv, Dataset,
    GroundTruthRow, Manifest, TrackSimConfig,
    DATASET_SCHEMA_VERSION,
};
pub use raycast::{raycast_box, SimObject};
pub use scan::{scan_angles, scan_direction, ScanMode, ScanPatternConfig};
pub use scenario::{simulate, EgoMotion, Scenario, BUILTIN_SCENARIOS};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{interpolate_pose, Pose};

/// A lidar return in the sensor frame at its acquisition time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimedPoint {
    pub position: Vector3<f64>,
    pub stamp: f64,
    pub object_id: Option<i64>,
}

/// All returns acquired during one frame, sorted by stamp.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub index: usize,
    pub start_stamp: f64,
    pub points: Vec<TimedPoint>,
    pub ego_pose_start: Pose,
    pub ego_pose_end: Pose,
}

/// Ego key poses at frame boundaries; poses in between are interpolated.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoTrajectory {
    keys: Vec<Pose>,
}

impl EgoTrajectory {
    pub fn new(keys: Vec<Pose>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::EmptyInput("ego trajectory has no poses".into()));
        }
        if keys.windows(2).any(|w| !(w[1].stamp > w[0].stamp)) {
            return Err(Error::InvalidArgument("ego pose stamps must strictly increase".into()));
        }
        Ok(EgoTrajectory { keys })
    }

    pub fn keys(&self) -> &[Pose] {
        &self.keys
    }

    pub fn pose_at(&self, t: f64) -> Result<Pose> {
        let first = self.keys[0];
        let last = *self.keys.last().unwrap();
        if t == first.stamp {
            return Ok(first);
        }
        if !(t > first.stamp && t <= last.stamp) {
            return Err(Error::MissingPose(t));
        }
        // First key strictly after t; t lies in [keys[i-1], keys[i]].
        let i = self.keys.partition_point(|p| p.stamp < t).max(1);
        if self.keys[i].stamp == t {
            return Ok(self.keys[i]);
        }
        interpolate_pose(&self.keys[i - 1], &self.keys[i], t)
    }
}

/// splitmix64 finalizer, used to derive independent seeds per frame and object.
pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates one lidar frame.
///
/// Timestamps are uniform over `[t0, t0 + frame_duration)`. Each beam is cast
/// from the interpolated ego pose at its own stamp against every object (and
/// the optional horizontal ground plane at `ground_z`); the nearest hit gets
/// Gaussian range noise and is stored in the sensor frame.
pub fn generate_frame(
    scene: &[SimObject],
    ego: &EgoTrajectory,
    cfg: &ScanPatternConfig,
    index: usize,
    rng_seed: u64,
    ground_z: Option<f64>,
) -> Result<RawFrame> {
    let t0 = index as f64 * cfg.frame_duration;
    let t1 = (index + 1) as f64 * cfg.frame_duration;
    let ego_pose_start = ego.pose_at(t0)?;
    let ego_pose_end = ego.pose_at(t1)?;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(index as u64);
    let noise = Normal::new(0.0, cfg.range_noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidArgument(format!("range noise: {e}")))?;

    let mut points = Vec::new();
    for k in 0..cfg.points_per_frame {
        let offset = cfg.point_offset(k);
        let stamp = t0 + offset;
        let pose = ego.pose_at(stamp)?;
        let dir_sensor = scan_direction(cfg, offset)?;
        let dir = pose.rotation.rotate(&dir_sensor);
        let origin = pose.translation;

        let mut best: Option<(f64, Option<i64>)> = None;
        for obj in scene {
            if let Some((_, range)) = raycast_box(&origin, &dir, obj, stamp) {
                if best.is_none_or(|(r, _)| range < r) {
                    best = Some((range, Some(obj.id)));
                }
            }
        }
        if let Some(gz) = ground_z {
            if dir.z < 0.0 && origin.z > gz {
                let range = (gz - origin.z) / dir.z;
                if best.is_none_or(|(r, _)| range < r) {
                    best = Some((range, None));
                }
            }
        }
        let Some((range, object_id)) = best else { continue };
        if range > cfg.max_range {
            continue;
        }
        let measured = if cfg.range_noise_sigma > 0.0 {
            range + noise.sample(&mut rng)
        } else {
            range
        };
        points.push(TimedPoint {
            position: dir_sensor * measured,
            stamp,
            object_id,
        });
    }

    Ok(RawFrame {
        index,
        start_stamp: t0,
        points,
        ego_pose_start,
        ego_pose_end,
    })
}
