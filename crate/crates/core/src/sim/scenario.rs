use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, GroundTruthRow, Manifest, TrackSimConfig, DATASET_SCHEMA_VERSION};
use super::{generate_feature_tracks, generate_frame, mix_seed, CameraModel, EgoTrajectory, ScanPatternConfig, SimObject};
use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation};

pub const BUILTIN_SCENARIOS: [&str; 4] = ["radial", "tangential", "turning", "rotating_lidar"];

/// Lidar height above the ground; built-in objects are centered at this height.
const SENSOR_HEIGHT: f64 = 0.75;

/// Unicycle ego motion: constant forward speed and yaw rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoMotion {
    pub start: Vector3<f64>,
    pub yaw0: f64,
    pub speed: f64,
    pub yaw_rate: f64,
}

impl Default for EgoMotion {
    fn default() -> Self {
        EgoMotion {
            start: Vector3::new(0.0, 0.0, SENSOR_HEIGHT),
            yaw0: 0.0,
            speed: 0.0,
            yaw_rate: 0.0,
        }
    }
}

impl EgoMotion {
    /// Exact unicycle pose at `t`.
    pub fn pose_at(&self, t: f64) -> Pose {
        let yaw = self.yaw0 + self.yaw_rate * t;
        let offset = if self.yaw_rate.abs() < 1e-12 {
            Vector3::new(self.yaw0.cos(), self.yaw0.sin(), 0.0) * (self.speed * t)
        } else {
            let r = self.speed / self.yaw_rate;
            Vector3::new(r * (yaw.sin() - self.yaw0.sin()), r * (self.yaw0.cos() - yaw.cos()), 0.0)
        };
        Pose::new(Rotation::from_yaw(yaw), self.start + offset, t)
    }

    /// Key poses at every frame boundary from 0 to `frames · frame_duration`.
    pub fn trajectory(&self, frames: usize, frame_duration: f64) -> Result<EgoTrajectory> {
        EgoTrajectory::new((0..=frames).map(|k| self.pose_at(k as f64 * frame_duration)).collect())
    }
}

/// Everything needed to synthesize a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub frames: usize,
    #[serde(default)]
    pub scan: ScanPatternConfig,
    #[serde(default)]
    pub camera: CameraModel,
    #[serde(default)]
    pub ego: EgoMotion,
    pub objects: Vec<SimObject>,
    #[serde(default)]
    pub ground_z: Option<f64>,
    #[serde(default)]
    pub tracks: TrackSimConfig,
}

fn car(id: i64, center0: Vector3<f64>, velocity: Vector3<f64>) -> SimObject {
    SimObject {
        id,
        half_extents: Vector3::new(2.25, 0.9, 0.75),
        center0,
        yaw: velocity.y.atan2(velocity.x),
        velocity,
    }
}

impl Scenario {
    /// One of [`BUILTIN_SCENARIOS`]. All run 20 frames of 0.1 s.
    pub fn builtin(name: &str) -> Result<Scenario> {
        let base = |objects: Vec<SimObject>| Scenario {
            name: name.to_string(),
            frames: 20,
            scan: ScanPatternConfig::default(),
            camera: CameraModel::default(),
            ego: EgoMotion::default(),
            objects,
            ground_z: None,
            tracks: TrackSimConfig::default(),
        };
        let h = SENSOR_HEIGHT;
        Ok(match name {
            // Approaching along the boresight from 25 m to 15 m.
            "radial" => base(vec![car(1, Vector3::new(25.0, 1.0, h), Vector3::new(-5.0, 0.0, 0.0))]),
            // Crossing from -y to +y at 18 m ahead.
            "tangential" => base(vec![car(1, Vector3::new(18.0, -5.0, h), Vector3::new(0.0, 5.0, 0.0))]),
            // Ego drives at 5 m/s while yawing at 0.3 rad/s behind a moving car.
            "turning" => {
                let mut s = base(vec![car(1, Vector3::new(20.0, 2.0, h), Vector3::new(4.0, 3.0, 0.0))]);
                s.ego.speed = 5.0;
                s.ego.yaw_rate = 0.3;
                s
            }
            "rotating_lidar" => {
                let mut s = base(vec![car(1, Vector3::new(15.0, -4.0, h), Vector3::new(0.0, 4.0, 0.0))]);
                s.scan = ScanPatternConfig::rotating();
                s.objects[0].yaw = FRAC_PI_2;
                s
            }
            other => return Err(Error::UnknownScenario(other.to_string())),
        })
    }

    pub fn from_toml_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        s.validate()?;
        Ok(s)
    }

    /// Built-in name or `custom:<file>`.
    pub fn resolve(name: &str) -> Result<Scenario> {
        match name.strip_prefix("custom:") {
            Some(path) => Scenario::from_toml_file(Path::new(path)),
            None => Scenario::builtin(name),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.frames == 0 {
            problems.push("frames must be >= 1".to_string());
        }
        for e in [self.scan.validate().err(), self.camera.validate().err()].into_iter().flatten() {
            match e {
                Error::Config(p) => problems.extend(p),
                other => problems.push(other.to_string()),
            }
        }
        for obj in &self.objects {
            if obj.half_extents.iter().any(|h| !(*h > 0.0)) {
                problems.push(format!("object {}: half_extents must be > 0", obj.id));
            }
        }
        let mut ids: Vec<i64> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            problems.push("object ids must be unique".to_string());
        }
        if ids.iter().any(|&id| id < 0) {
            problems.push("object ids must be non-negative".to_string());
        }
        let t = &self.tracks;
        if t.per_object < 1 || !(0.0..0.5).contains(&t.outlier_fraction) || !(t.pixel_noise_sigma >= 0.0) {
            problems.push("tracks: per_object >= 1, outlier_fraction in [0, 0.5), pixel_noise_sigma >= 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Synthesizes the full dataset for `scenario`. Deterministic in `seed`.
pub fn simulate(scenario: &Scenario, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    let dt = scenario.scan.frame_duration;
    let ego = scenario.ego.trajectory(scenario.frames, dt)?;

    let frames = (0..scenario.frames)
        .into_par_iter()
        .map(|k| generate_frame(&scenario.objects, &ego, &scenario.scan, k, seed, scenario.ground_z))
        .collect::<Result<Vec<_>>>()?;

    let tracks = (0..scenario.frames)
        .into_par_iter()
        .map(|k| {
            let (t0, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
            let mut all = Vec::new();
            for obj in &scenario.objects {
                all.extend(generate_feature_tracks(
                    obj,
                    &scenario.camera,
                    &ego,
                    t0,
                    t1,
                    scenario.tracks.per_object,
                    scenario.tracks.outlier_fraction,
                    scenario.tracks.pixel_noise_sigma,
                    mix_seed(seed, k as u64 + 1, obj.id as u64 + 1),
                )?);
            }
            Ok(all)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ground_truth = Vec::with_capacity(scenario.frames * scenario.objects.len());
    for k in 0..scenario.frames {
        let stamp = k as f64 * dt;
        for obj in &scenario.objects {
            ground_truth.push(GroundTruthRow::of(obj, stamp));
        }
    }

    Ok(Dataset {
        manifest: Manifest {
            schema_version: DATASET_SCHEMA_VERSION,
            scenario: scenario.name.clone(),
            seed,
            frame_count: scenario.frames,
            frame_duration: dt,
            scan: scenario.scan.clone(),
            camera: scenario.camera.clone(),
            ego: scenario.ego.clone(),
            ground_z: scenario.ground_z,
            tracks: scenario.tracks.clone(),
        },
        frames,
        ego,
        tracks,
        ground_truth,
    })
}
