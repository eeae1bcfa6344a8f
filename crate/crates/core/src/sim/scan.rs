use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::wrap_angle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// Two-axis sinusoidal sweep (rosette), points from one object spread over the whole frame.
    Oscillating,
    /// Spinning multi-ring sensor, one revolution per `1 / rot_rate` seconds.
    Rotating,
}

/// Scan pattern of the simulated lidar. Angles in radians, frequencies in Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanPatternConfig {
    pub mode: ScanMode,
    pub frame_duration: f64,
    pub points_per_frame: usize,
    pub fov_h: f64,
    pub fov_v: f64,
    pub osc_freq_az: f64,
    pub osc_freq_el: f64,
    pub osc_phase_az: f64,
    pub osc_phase_el: f64,
    pub rot_rate: f64,
    /// Number of laser rings in rotating mode, spread evenly over `fov_v`.
    pub rings: usize,
    pub range_noise_sigma: f64,
    pub max_range: f64,
}

impl Default for ScanPatternConfig {
    fn default() -> Self {
        ScanPatternConfig {
            mode: ScanMode::Oscillating,
            frame_duration: 0.1,
            points_per_frame: 24_000,
            fov_h: 81.7f64.to_radians(),
            fov_v: 25.1f64.to_radians(),
            osc_freq_az: 1503.1,
            osc_freq_el: 1117.9,
            osc_phase_az: 0.0,
            osc_phase_el: 0.0,
            rot_rate: 10.0,
            rings: 16,
            range_noise_sigma: 0.02,
            max_range: 200.0,
        }
    }
}

impl ScanPatternConfig {
    /// Spinning-sensor defaults: one revolution per 0.1 s frame, 64 rings.
    pub fn rotating() -> Self {
        ScanPatternConfig {
            mode: ScanMode::Rotating,
            points_per_frame: 40_000,
            fov_v: 26.9f64.to_radians(),
            rings: 64,
            ..ScanPatternConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.frame_duration > 0.0) {
            problems.push("scan.frame_duration must be > 0".to_string());
        }
        if self.points_per_frame < 1 {
            problems.push("scan.points_per_frame must be >= 1".to_string());
        }
        if !(self.range_noise_sigma >= 0.0) {
            problems.push("scan.range_noise_sigma must be >= 0".to_string());
        }
        if !(self.fov_h > 0.0 && self.fov_v >= 0.0) {
            problems.push("scan.fov_h must be > 0 and scan.fov_v >= 0".to_string());
        }
        if !(self.max_range > 0.0) {
            problems.push("scan.max_range must be > 0".to_string());
        }
        match self.mode {
            ScanMode::Oscillating => {
                if !(self.osc_freq_az > 0.0 && self.osc_freq_el > 0.0) {
                    problems.push("scan.osc_freq_az and scan.osc_freq_el must be > 0".to_string());
                } else if let Some((p, q)) = small_fraction(self.osc_freq_az / self.osc_freq_el) {
                    problems.push(format!(
                        "scan.osc_freq_az / scan.osc_freq_el = {p}/{q}; a rosette needs an incommensurate ratio"
                    ));
                }
            }
            ScanMode::Rotating => {
                if !(self.rot_rate > 0.0) {
                    problems.push("scan.rot_rate must be > 0".to_string());
                }
                if self.rings < 1 {
                    problems.push("scan.rings must be >= 1".to_string());
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// In-frame offset of the k-th point.
    pub fn point_offset(&self, k: usize) -> f64 {
        self.frame_duration * k as f64 / self.points_per_frame as f64
    }
}

/// `Some((p, q))` when `ratio` equals `p/q` for some `q <= 4`.
fn small_fraction(ratio: f64) -> Option<(i64, i64)> {
    (1..=4).find_map(|q| {
        let p = (ratio * q as f64).round();
        ((ratio - p / q as f64).abs() < 1e-6).then_some((p as i64, q))
    })
}

/// Azimuth (left positive) and elevation of the beam at `t_in_frame`.
pub fn scan_angles(cfg: &ScanPatternConfig, t_in_frame: f64) -> Result<(f64, f64)> {
    if !(t_in_frame >= 0.0 && t_in_frame <= cfg.frame_duration) {
        return Err(Error::OutOfRange(format!(
            "t_in_frame = {t_in_frame} outside [0, {}]",
            cfg.frame_duration
        )));
    }
    Ok(match cfg.mode {
        ScanMode::Oscillating => (
            0.5 * cfg.fov_h * (2.0 * PI * cfg.osc_freq_az * t_in_frame + cfg.osc_phase_az).sin(),
            0.5 * cfg.fov_v * (2.0 * PI * cfg.osc_freq_el * t_in_frame + cfg.osc_phase_el).sin(),
        ),
        ScanMode::Rotating => {
            let azimuth = wrap_angle(2.0 * PI * cfg.rot_rate * t_in_frame);
            let firing = (t_in_frame * cfg.points_per_frame as f64 / cfg.frame_duration).round() as usize;
            let elevation = if cfg.rings > 1 {
                let ring = firing % cfg.rings;
                -0.5 * cfg.fov_v + cfg.fov_v * ring as f64 / (cfg.rings - 1) as f64
            } else {
                0.0
            };
            (azimuth, elevation)
        }
    })
}

/// Unit beam direction in the sensor frame (x forward, y left, z up).
pub fn scan_direction(cfg: &ScanPatternConfig, t_in_frame: f64) -> Result<Vector3<f64>> {
    let (az, el) = scan_angles(cfg, t_in_frame)?;
    Ok(Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()))
}
