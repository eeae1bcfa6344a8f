//! Pipeline configuration file (TOML). Every key is optional; unknown keys
//! and out-of-range values are collected and reported together.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera_velocity::DepthEstimator;
use crate::error::{Error, Result};
use crate::evaluation::CrispnessConfig;
use crate::fusion_tracking::TrackerConfig;
use crate::lidar_velocity::LidarWeights;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Fused,
    LidarOnly,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Fused => "fused",
            Mode::LidarOnly => "lidar_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSettings {
    pub voxel_size: f64,
    pub weights: LidarWeights,
}

impl Default for LidarSettings {
    fn default() -> Self {
        LidarSettings {
            voxel_size: 0.5,
            weights: LidarWeights::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSettings {
    /// Inlier radius on pixel displacement.
    pub ransac_threshold_px: f64,
    pub ransac_iters: usize,
    pub depth: DepthEstimator,
}

impl Default for CameraSettings {
    fn default() -> Self {
        CameraSettings {
            ransac_threshold_px: 2.0,
            ransac_iters: 200,
            depth: DepthEstimator::Mean,
        }
    }
}

/// Gaussian jitter applied to ground-truth boxes to emulate a detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSettings {
    pub center_sigma: f64,
    pub yaw_sigma: f64,
    pub dims_sigma: f64,
    /// Extraction boxes are grown by this fraction of each dimension.
    pub dilation: f64,
    /// Frames whose detections are withheld from the tracker.
    pub drop_frames: Vec<usize>,
}

impl Default for DetectionSettings {
    fn default() -> Self {
        DetectionSettings {
            center_sigma: 0.1,
            yaw_sigma: 0.02,
            dims_sigma: 0.05,
            dilation: 0.2,
            drop_frames: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Consecutive frames pooled into one lidar estimate; 0 picks 1 for
    /// oscillating scans and 3 for rotating ones.
    pub merge_frames: usize,
    pub lidar: LidarSettings,
    pub camera: CameraSettings,
    pub detection: DetectionSettings,
    pub tracker: TrackerConfig,
    pub crispness: CrispnessConfig,
}

/// Keys that are valid but absent from the serialized defaults.
const OPTIONAL_KEYS: &[&str] = &["crispness.max_neighbor_dist"];

fn leaf_paths(prefix: &str, value: &toml::Value, out: &mut Vec<(String, toml::Value)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_paths(&path, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn has_path(value: &toml::Value, path: &str) -> bool {
    let mut cur = value;
    for part in path.split('.') {
        match cur.get(part) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    true
}

fn set_path(value: &mut toml::Value, path: &str, leaf: toml::Value) {
    let parts: Vec<&str> = path.split('.').collect();
    let mut cur = value;
    for part in &parts[..parts.len() - 1] {
        let table = cur.as_table_mut().expect("config defaults are tables");
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    if let Some(t) = cur.as_table_mut() {
        t.insert(parts[parts.len() - 1].to_string(), leaf);
    }
}

impl PipelineConfig {
    /// The defaults as a comment-free TOML document.
    pub fn defaults_toml() -> String {
        toml::to_string_pretty(&PipelineConfig::default()).expect("defaults serialize")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| Error::Config(vec![format!("not valid TOML: {}", e.message())]))?;
        let defaults = toml::Value::try_from(PipelineConfig::default()).expect("defaults serialize");

        let mut leaves = Vec::new();
        leaf_paths("", &user, &mut leaves);
        let mut problems = Vec::new();
        // Well-typed keys are applied to the defaults so range checks still run
        // when other keys are bad, and every offending key gets reported.
        let mut merged = defaults.clone();
        for (path, leaf) in &leaves {
            let known = has_path(&defaults, path) || OPTIONAL_KEYS.contains(&path.as_str());
            if !known {
                problems.push(format!("unknown key `{path}`"));
                continue;
            }
            let mut probe = defaults.clone();
            set_path(&mut probe, path, leaf.clone());
            match probe.try_into::<PipelineConfig>() {
                Ok(_) => set_path(&mut merged, path, leaf.clone()),
                Err(e) => problems.push(format!("`{path}`: {}", e.message().trim())),
            }
        }
        let cfg: PipelineConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        match cfg.validate() {
            Err(Error::Config(more)) => problems.extend(more),
            Err(e) => return Err(e),
            Ok(()) => {}
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        let mut positive = |key: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                p.push(format!("`{key}` must be > 0, got {v}"));
            }
        };
        positive("lidar.voxel_size", self.lidar.voxel_size);
        positive("camera.ransac_threshold_px", self.camera.ransac_threshold_px);
        positive("crispness.sigma", self.crispness.sigma);
        if let Some(d) = self.crispness.max_neighbor_dist {
            positive("crispness.max_neighbor_dist", d);
        }
        let m = &self.tracker.measurement;
        positive("tracker.measurement.center_var", m.center_var);
        positive("tracker.measurement.yaw_var", m.yaw_var);
        positive("tracker.measurement.dims_var", m.dims_var);
        positive("tracker.measurement.score_var", m.score_var);

        let mut non_negative = |key: &str, v: f64| {
            if !(v >= 0.0 && v.is_finite()) {
                p.push(format!("`{key}` must be >= 0, got {v}"));
            }
        };
        non_negative("lidar.weights.local", self.lidar.weights.local);
        non_negative("lidar.weights.global", self.lidar.weights.global);
        non_negative("detection.center_sigma", self.detection.center_sigma);
        non_negative("detection.yaw_sigma", self.detection.yaw_sigma);
        non_negative("detection.dims_sigma", self.detection.dims_sigma);
        non_negative("detection.dilation", self.detection.dilation);
        let q = &self.tracker.process;
        non_negative("tracker.process.sigma_accel", q.sigma_accel);
        non_negative("tracker.process.yaw_rate_var", q.yaw_rate_var);
        non_negative("tracker.process.dims_rate_var", q.dims_rate_var);
        non_negative("tracker.process.score_rate_var", q.score_rate_var);

        if self.lidar.weights.local + self.lidar.weights.global <= 0.0 {
            p.push("`lidar.weights`: local and global cannot both be 0".into());
        }
        if self.camera.ransac_iters == 0 {
            p.push("`camera.ransac_iters` must be > 0".into());
        }
        if self.tracker.min_hits == 0 {
            p.push("`tracker.min_hits` must be > 0".into());
        }
        let iou = self.tracker.iou_min;
        if !(iou > 0.0 && iou <= 1.0) {
            p.push(format!("`tracker.iou_min` must be in (0, 1], got {iou}"));
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let text = PipelineConfig::defaults_toml();
        let cfg = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let cfg = PipelineConfig::from_toml_str("mode = \"lidar_only\"\n[tracker.process]\nsigma_accel = 2.0\n").unwrap();
        assert_eq!(cfg.mode, Mode::LidarOnly);
        assert_eq!(cfg.tracker.process.sigma_accel, 2.0);
        assert_eq!(cfg.tracker.process.yaw_rate_var, 1e-3);
        assert_eq!(cfg.tracker.min_hits, 2);
        let cfg = PipelineConfig::from_toml_str("[crispness]\nmax_neighbor_dist = 0.5\n").unwrap();
        assert_eq!(cfg.crispness.max_neighbor_dist, Some(0.5));
    }

    #[test]
    fn every_offending_key_is_listed() {
        let text = "voxel = 1\nmode = \"both\"\n[lidar]\nvoxel_size = \"big\"\n[tracker]\nmin_hit = 3\n";
        let Err(Error::Config(problems)) = PipelineConfig::from_toml_str(text) else {
            panic!("expected a config error");
        };
        let joined = problems.join("\n");
        for key in ["voxel", "mode", "lidar.voxel_size", "tracker.min_hit"] {
            assert!(joined.contains(&format!("`{key}`")), "{key} missing from {joined}");
        }
        assert_eq!(problems.len(), 4);
    }

    #[test]
    fn range_problems_are_all_reported() {
        let text = "[lidar]\nvoxel_size = -1.0\n[crispness]\nsigma = 0.0\n[tracker]\niou_min = 1.5\n";
        let Err(Error::Config(problems)) = PipelineConfig::from_toml_str(text) else {
            panic!("expected a config error");
        };
        assert_eq!(problems.len(), 3, "{problems:?}");
    }

    #[test]
    fn config_errors_map_to_exit_code_two() {
        assert_eq!(PipelineConfig::from_toml_str("bogus = 1").unwrap_err().exit_code(), 2);
        assert_eq!(PipelineConfig::from_toml_str("[[[").unwrap_err().exit_code(), 2);
    }
}
