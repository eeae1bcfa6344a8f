//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.toml         sensor configs, camera, seed, frame count
//! <dir>/frames/000000.csv     x,y,z,stamp,object_id   (sensor frame; object_id -1 = background)
//! <dir>/ego.csv               stamp,qw,qx,qy,qz,tx,ty,tz   (frame_count + 1 key poses)
//! <dir>/tracks/000000.csv     object_id,u0,v0,u1,v1,is_outlier
//! <dir>/gt.csv                stamp,object_id,cx,cy,cz,yaw,l,w,h,vx,vy,vz
//! ```
//!
//! Floats are written in shortest round-trip form, so export followed by
//! import reproduces every value bit for bit (poses up to quaternion
//! conversion).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CameraModel, EgoMotion, EgoTrajectory, FeatureTrack, RawFrame, ScanPatternConfig, SimObject, TimedPoint};
use crate::error::{Error, Result};
use crate::geom::{Pose, Rotation};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Feature-track synthesis parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSimConfig {
    pub per_object: usize,
    pub outlier_fraction: f64,
    pub pixel_noise_sigma: f64,
}

impl Default for TrackSimConfig {
    fn default() -> Self {
        TrackSimConfig {
            per_object: 60,
            outlier_fraction: 0.1,
            pixel_noise_sigma: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub frame_count: usize,
    pub frame_duration: f64,
    pub scan: ScanPatternConfig,
    pub camera: CameraModel,
    pub ego: EgoMotion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_z: Option<f64>,
    pub tracks: TrackSimConfig,
}

/// Object state at the start of a frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthRow {
    pub stamp: f64,
    pub object_id: i64,
    pub center: Vector3<f64>,
    pub yaw: f64,
    /// (l, w, h).
    pub dims: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl GroundTruthRow {
    pub fn of(obj: &SimObject, stamp: f64) -> Self {
        GroundTruthRow {
            stamp,
            object_id: obj.id,
            center: obj.center_at(stamp),
            yaw: obj.yaw,
            dims: obj.dims(),
            velocity: obj.velocity,
        }
    }

    /// Constant-velocity object consistent with this row.
    pub fn object(&self) -> SimObject {
        SimObject {
            id: self.object_id,
            half_extents: self.dims / 2.0,
            center0: self.center - self.velocity * self.stamp,
            yaw: self.yaw,
            velocity: self.velocity,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub frames: Vec<RawFrame>,
    pub ego: EgoTrajectory,
    /// Feature tracks between the boundaries of frame k, for every k.
    pub tracks: Vec<Vec<FeatureTrack>>,
    pub ground_truth: Vec<GroundTruthRow>,
}

impl Dataset {
    pub fn ground_truth_at(&self, frame: usize) -> impl Iterator<Item = &GroundTruthRow> {
        let stamp = self.frames.get(frame).map(|f| f.start_stamp);
        self.ground_truth.iter().filter(move |g| Some(g.stamp) == stamp)
    }

    pub fn object_ids(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.ground_truth.iter().map(|g| g.object_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

const FRAME_HEADER: &str = "x,y,z,stamp,object_id";
const EGO_HEADER: &str = "stamp,qw,qx,qy,qz,tx,ty,tz";
const TRACK_HEADER: &str = "object_id,u0,v0,u1,v1,is_outlier";
const GT_HEADER: &str = "stamp,object_id,cx,cy,cz,yaw,l,w,h,vx,vy,vz";

fn frame_file(dir: &Path, sub: &str, k: usize) -> PathBuf {
    dir.join(sub).join(format!("{k:06}.csv"))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `ds` under `dir`, creating it if needed. Output depends only on `ds`.
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    for sub in ["frames", "tracks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let manifest = toml::to_string(&ds.manifest).map_err(|e| Error::Internal(format!("manifest: {e}")))?;
    write_file(&dir.join("manifest.toml"), &manifest)?;

    for (k, frame) in ds.frames.iter().enumerate() {
        write_points_csv(&frame_file(dir, "frames", k), &frame.points)?;
    }

    let mut s = format!("{EGO_HEADER}\n");
    for p in ds.ego.keys() {
        let q = p.rotation.to_quaternion();
        let t = p.translation;
        let _ = writeln!(s, "{},{},{},{},{},{},{},{}", p.stamp, q.w, q.i, q.j, q.k, t.x, t.y, t.z);
    }
    write_file(&dir.join("ego.csv"), &s)?;

    for (k, tracks) in ds.tracks.iter().enumerate() {
        let mut s = format!("{TRACK_HEADER}\n");
        for t in tracks {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                t.object_id, t.pixel_t0.x, t.pixel_t0.y, t.pixel_t1.x, t.pixel_t1.y, t.is_outlier as u8
            );
        }
        write_file(&frame_file(dir, "tracks", k), &s)?;
    }

    let mut s = format!("{GT_HEADER}\n");
    for g in &ds.ground_truth {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            g.stamp,
            g.object_id,
            g.center.x,
            g.center.y,
            g.center.z,
            g.yaw,
            g.dims.x,
            g.dims.y,
            g.dims.z,
            g.velocity.x,
            g.velocity.y,
            g.velocity.z
        );
    }
    write_file(&dir.join("gt.csv"), &s)
}

/// Writes points in the frame schema (`x,y,z,stamp,object_id`, -1 = unlabeled).
pub fn write_points_csv(path: &Path, points: &[TimedPoint]) -> Result<()> {
    let mut s = String::with_capacity(points.len() * 64 + FRAME_HEADER.len() + 1);
    s.push_str(FRAME_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.position.x,
            p.position.y,
            p.position.z,
            p.stamp,
            p.object_id.unwrap_or(-1)
        );
    }
    write_file(path, &s)
}

pub fn read_points_csv(path: &Path) -> Result<Vec<TimedPoint>> {
    let rows: Vec<(f64, f64, f64, f64, i64)> = read_csv(path, FRAME_HEADER)?;
    Ok(rows
        .into_iter()
        .map(|(x, y, z, stamp, id)| TimedPoint {
            position: Vector3::new(x, y, z),
            stamp,
            object_id: (id >= 0).then_some(id),
        })
        .collect())
}

/// Reads every record of a headed CSV file, checking the header first.
pub(crate) fn read_csv<T: DeserializeOwned>(path: &Path, header: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, format!("{other:?}")),
        })?;
    let found = rdr.headers().map_err(|e| Error::parse(path, e))?.iter().collect::<Vec<_>>().join(",");
    if found != header {
        return Err(Error::parse(path, format!("expected header `{header}`, found `{found}`")));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 2))))
        .collect()
}

/// Reads and version-checks `manifest.toml` in `dir`.
pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: toml::Value = toml::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| Error::parse(&path, "missing integer `schema_version`"))?;
    if found != DATASET_SCHEMA_VERSION as i64 {
        return Err(Error::SchemaVersion {
            expected: DATASET_SCHEMA_VERSION,
            found: u32::try_from(found).unwrap_or(u32::MAX),
            path,
        });
    }
    toml::from_str(&text).map_err(|e| Error::parse(&path, e))
}

/// Hex SHA-256 of the manifest bytes; identifies a dataset.
pub fn manifest_digest(dir: &Path) -> Result<String> {
    let path = dir.join("manifest.toml");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let n = manifest.frame_count;

    let ego_path = dir.join("ego.csv");
    let rows: Vec<(f64, f64, f64, f64, f64, f64, f64, f64)> = read_csv(&ego_path, EGO_HEADER)?;
    if rows.len() != n + 1 {
        return Err(Error::parse(&ego_path, format!("expected {} poses, found {}", n + 1, rows.len())));
    }
    let keys = rows
        .iter()
        .map(|&(stamp, qw, qx, qy, qz, tx, ty, tz)| {
            let q = nalgebra::Quaternion::new(qw, qx, qy, qz);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::parse(&ego_path, format!("non-unit quaternion at t = {stamp}")));
            }
            let rot = Rotation::from_quaternion(&UnitQuaternion::new_normalize(q));
            Ok(Pose::new(rot, Vector3::new(tx, ty, tz), stamp))
        })
        .collect::<Result<Vec<_>>>()?;
    let ego = EgoTrajectory::new(keys)?;

    let mut frames = Vec::with_capacity(n);
    let mut tracks = Vec::with_capacity(n);
    for k in 0..n {
        let points = read_points_csv(&frame_file(dir, "frames", k))?;
        frames.push(RawFrame {
            index: k,
            start_stamp: ego.keys()[k].stamp,
            points,
            ego_pose_start: ego.keys()[k],
            ego_pose_end: ego.keys()[k + 1],
        });

        let path = frame_file(dir, "tracks", k);
        let rows: Vec<(i64, f64, f64, f64, f64, u8)> = read_csv(&path, TRACK_HEADER)?;
        tracks.push(
            rows.into_iter()
                .map(|(id, u0, v0, u1, v1, out)| FeatureTrack {
                    object_id: id,
                    pixel_t0: Vector2::new(u0, v0),
                    pixel_t1: Vector2::new(u1, v1),
                    is_outlier: out != 0,
                })
                .collect(),
        );
    }

    type GtRecord = (f64, i64, f64, f64, f64, f64, f64, f64, f64, f64, f64, f64);
    let rows: Vec<GtRecord> = read_csv(&dir.join("gt.csv"), GT_HEADER)?;
    let ground_truth = rows
        .into_iter()
        .map(|(stamp, id, cx, cy, cz, yaw, l, w, h, vx, vy, vz)| GroundTruthRow {
            stamp,
            object_id: id,
            center: Vector3::new(cx, cy, cz),
            yaw,
            dims: Vector3::new(l, w, h),
            velocity: Vector3::new(vx, vy, vz),
        })
        .collect();

    Ok(Dataset {
        manifest,
        frames,
        ego,
        tracks,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, Scenario};

    fn small() -> Scenario {
        let mut s = Scenario::builtin("turning").unwrap();
        s.frames = 3;
        s.scan.points_per_frame = 2000;
        s
    }

    #[test]
    fn export_import_round_trip() {
        let ds = simulate(&small(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.ground_truth, ds.ground_truth);
        assert_eq!(back.tracks, ds.tracks);
        for (a, b) in back.frames.iter().zip(&ds.frames) {
            assert_eq!(a.points, b.points);
            assert_eq!(a.start_stamp, b.start_stamp);
            assert!((a.ego_pose_start.rotation.matrix() - b.ego_pose_start.rotation.matrix()).amax() < 1e-12);
            assert!((a.ego_pose_end.translation - b.ego_pose_end.translation).amax() < 1e-12);
        }
    }

    #[test]
    fn export_is_byte_identical_for_same_seed() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        export_dataset(&simulate(&small(), 9).unwrap(), a.path()).unwrap();
        export_dataset(&simulate(&small(), 9).unwrap(), b.path()).unwrap();
        for f in ["manifest.toml", "ego.csv", "gt.csv", "frames/000001.csv", "tracks/000002.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(manifest_digest(a.path()).unwrap(), manifest_digest(b.path()).unwrap());
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&simulate(&small(), 1).unwrap(), dir.path()).unwrap();
        let path = dir.path().join("manifest.toml");
        let text = fs::read_to_string(&path).unwrap().replace("schema_version = 1", "schema_version = 7");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::SchemaVersion { found: 7, .. })));
    }

    #[test]
    fn bad_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&simulate(&small(), 1).unwrap(), dir.path()).unwrap();
        fs::write(dir.path().join("gt.csv"), "a,b\n1,2\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { .. })));
    }
}
