//! Scores a run against the dataset it was produced from.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::config::{Mode, PipelineConfig};
use super::run::{labeled_frame, read_corrections_csv, read_measurements_csv, Correction, Measurement, RunInfo, RunOutput, StageTimings};
use crate::egomotion::GlobalPoint;
use crate::error::{Error, Result};
use crate::evaluation::{crispness, integrated_distance, trace_length, velocity_error, CrispnessConfig};
use crate::fusion_tracking::{iou3d, read_tracks_csv, Box3, TrackRow};
use crate::sim::{load_dataset, manifest_digest, read_points_csv, Dataset, GroundTruthRow};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Consecutive frames scored together by crispness.
pub const CRISPNESS_WINDOW: usize = 3;

/// Minimum overlap for a track row to count as following a ground-truth object.
pub const MATCH_IOU: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub object_id: i64,
    pub frames_present: usize,
    pub frames_measured: usize,
    pub frames_tracked: usize,
    pub crispness_corrected: Option<f64>,
    pub crispness_uncorrected: Option<f64>,
    /// Tracked velocity against ground truth.
    pub velocity_rmse: Option<f64>,
    pub velocity_bias: Option<[f64; 3]>,
    /// Per-frame measurements (before the tracker) against ground truth.
    pub measurement_rmse: Option<f64>,
    pub measurement_radial_rmse: Option<f64>,
    pub measurement_tangential_rmse: Option<f64>,
    pub integrated_distance: Option<f64>,
    pub gt_trace_length: Option<f64>,
    pub distance_relative_error: Option<f64>,
    pub track_ids: Vec<u64>,
    pub id_switches: usize,
    pub id_consistency: Option<f64>,
    pub mean_iou: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub crispness_corrected: Option<f64>,
    pub crispness_uncorrected: Option<f64>,
    pub velocity_rmse: Option<f64>,
    pub measurement_rmse: Option<f64>,
    pub measurement_tangential_rmse: Option<f64>,
    pub distance_relative_error: Option<f64>,
    pub id_consistency: Option<f64>,
    pub mean_iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub scenario: String,
    pub mode: Mode,
    pub dataset_manifest_sha256: String,
    pub crispness_sigma: f64,
    pub summary: Summary,
    pub objects: Vec<ObjectMetrics>,
    pub timings_ms: StageTimings,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn rms(xs: &[f64]) -> Option<f64> {
    mean(&xs.iter().map(|x| x * x).collect::<Vec<_>>()).map(f64::sqrt)
}

/// Object points of frame `k` moved to `t_ref` with velocity `v`.
fn object_cloud(points: &[GlobalPoint], id: i64, v: &Vector3<f64>, t_ref: f64) -> Vec<Vector3<f64>> {
    points
        .iter()
        .filter(|p| p.object_id == Some(id))
        .map(|p| p.position - v * (p.stamp - t_ref))
        .collect()
}

/// Mean crispness over every run of [`CRISPNESS_WINDOW`] consecutive
/// corrected frames. In each window the corrected clouds are carried to the
/// first frame's start with their own correction velocities; the
/// uncorrected score uses the same frames as acquired.
fn windowed_crispness(
    ds: &Dataset,
    run: &RunOutput,
    uncorrected: &[Vec<GlobalPoint>],
    id: i64,
    cfg: &CrispnessConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    let applied: Vec<&Correction> = run.corrections.iter().filter(|c| c.object_id == id).collect();
    let (mut fixed, mut raw) = (Vec::new(), Vec::new());
    for w in applied.windows(CRISPNESS_WINDOW) {
        if !w.windows(2).all(|p| p[1].frame == p[0].frame + 1) {
            continue;
        }
        let t_ref = ds.frames[w[0].frame].start_stamp;
        let corrected: Vec<Vec<Vector3<f64>>> = w
            .iter()
            .map(|c| {
                // Corrected points sit at their frame start; carry them on to t_ref.
                let t0 = ds.frames[c.frame].start_stamp;
                let v = c.velocity();
                run.corrected[c.frame]
                    .iter()
                    .filter(|p| p.object_id == Some(id))
                    .map(|p| p.position - v * (t0 - t_ref))
                    .collect()
            })
            .collect();
        let zero = Vector3::zeros();
        let original: Vec<Vec<Vector3<f64>>> =
            w.iter().map(|c| object_cloud(&uncorrected[c.frame], id, &zero, t_ref)).collect();
        if corrected.iter().chain(&original).any(Vec::is_empty) {
            continue;
        }
        fixed.push(crispness(&corrected, cfg)?);
        raw.push(crispness(&original, cfg)?);
    }
    Ok((mean(&fixed), mean(&raw)))
}

fn gt_box(g: &GroundTruthRow) -> Box3 {
    Box3 {
        center: g.center,
        yaw: g.yaw,
        dims: g.dims,
    }
}

/// Computes every metric for one run. `uncorrected[k]` are the
/// extraction-labeled, ego-undistorted points of frame k.
pub fn evaluate(
    ds: &Dataset,
    run: &RunOutput,
    uncorrected: &[Vec<GlobalPoint>],
    info: &RunInfo,
    crisp: &CrispnessConfig,
) -> Result<Metrics> {
    let n = ds.frames.len();
    if run.corrected.len() != n || uncorrected.len() != n {
        return Err(Error::MisalignedInput(format!(
            "dataset has {n} frames, run has {} corrected frames",
            run.corrected.len()
        )));
    }
    let dt = ds.manifest.frame_duration;
    let mut tracks_by_frame: BTreeMap<usize, Vec<&TrackRow>> = BTreeMap::new();
    for r in &run.tracks {
        tracks_by_frame.entry(r.frame).or_default().push(r);
    }

    let mut objects = Vec::new();
    let mut all_track_err = Vec::new();
    let mut all_meas_err = Vec::new();
    let mut all_tan_err = Vec::new();
    let mut all_iou = Vec::new();
    let (mut consistent, mut matched_total) = (0usize, 0usize);

    for id in ds.object_ids() {
        let rows: Vec<(usize, GroundTruthRow)> = (0..n)
            .filter_map(|k| ds.ground_truth_at(k).find(|g| g.object_id == id).map(|g| (k, *g)))
            .collect();
        let mut m = ObjectMetrics {
            object_id: id,
            frames_present: rows.len(),
            ..ObjectMetrics::default()
        };

        (m.crispness_corrected, m.crispness_uncorrected) = windowed_crispness(ds, run, uncorrected, id, crisp)?;

        let meas: Vec<&Measurement> = run.measurements.iter().filter(|x| x.object_id == id).collect();
        m.frames_measured = meas.len();
        let (mut est, mut truth, mut radial, mut tangential) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for x in &meas {
            if let Some((_, g)) = rows.iter().find(|(k, _)| *k == x.frame) {
                let e = x.velocity() - g.velocity;
                let u = x.radial_direction();
                est.push(x.velocity());
                truth.push(g.velocity);
                radial.push(e.dot(&u));
                tangential.push((e - u * e.dot(&u)).norm());
            }
        }
        if !est.is_empty() {
            m.measurement_rmse = Some(velocity_error(&est, &truth)?.rmse);
            m.measurement_radial_rmse = rms(&radial);
            m.measurement_tangential_rmse = rms(&tangential);
            all_meas_err.extend(est.iter().zip(&truth).map(|(a, b)| (a - b).norm()));
            all_tan_err.extend(tangential);
        }

        // Track rows following this object, one per frame at most.
        let mut matched: Vec<(usize, &TrackRow, f64, &GroundTruthRow)> = Vec::new();
        for (k, g) in &rows {
            let best = tracks_by_frame
                .get(k)
                .into_iter()
                .flatten()
                .map(|r| (*r, iou3d(&r.bbox(), &gt_box(g))))
                .filter(|(_, iou)| *iou >= MATCH_IOU)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((r, iou)) = best {
                matched.push((*k, r, iou, g));
            }
        }
        m.frames_tracked = matched.len();
        if !matched.is_empty() {
            let est: Vec<Vector3<f64>> = matched.iter().map(|(_, r, _, _)| r.velocity()).collect();
            let truth: Vec<Vector3<f64>> = matched.iter().map(|(_, _, _, g)| g.velocity).collect();
            let err = velocity_error(&est, &truth)?;
            m.velocity_rmse = Some(err.rmse);
            m.velocity_bias = Some([err.bias.x, err.bias.y, err.bias.z]);
            all_track_err.extend(est.iter().zip(&truth).map(|(a, b)| (a - b).norm()));

            let ious: Vec<f64> = matched.iter().map(|(_, _, iou, _)| *iou).collect();
            m.mean_iou = mean(&ious);
            all_iou.extend(ious);

            let ids: Vec<u64> = matched.iter().map(|(_, r, _, _)| r.track_id).collect();
            m.id_switches = ids.windows(2).filter(|w| w[0] != w[1]).count();
            let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
            for id in &ids {
                *counts.entry(*id).or_default() += 1;
            }
            let majority = counts.values().copied().max().unwrap_or(0);
            m.id_consistency = Some(majority as f64 / ids.len() as f64);
            consistent += majority;
            matched_total += ids.len();
            m.track_ids = counts.keys().copied().collect();

            let dist = integrated_distance(&est, &vec![dt; est.len()])?;
            let gt_len: f64 = matched
                .iter()
                .map(|(k, _, _, g)| {
                    let end = rows
                        .iter()
                        .find(|(j, _)| *j == k + 1)
                        .map_or(g.center + g.velocity * dt, |(_, next)| next.center);
                    trace_length(&[g.center, end])
                })
                .sum();
            m.integrated_distance = Some(dist);
            m.gt_trace_length = Some(gt_len);
            m.distance_relative_error = (gt_len > 0.0).then(|| (dist - gt_len).abs() / gt_len);
        }
        objects.push(m);
    }

    let collect = |f: fn(&ObjectMetrics) -> Option<f64>| objects.iter().filter_map(f).collect::<Vec<f64>>();
    let summary = Summary {
        crispness_corrected: mean(&collect(|o| o.crispness_corrected)),
        crispness_uncorrected: mean(&collect(|o| o.crispness_uncorrected)),
        velocity_rmse: rms(&all_track_err),
        measurement_rmse: rms(&all_meas_err),
        measurement_tangential_rmse: rms(&all_tan_err),
        distance_relative_error: mean(&collect(|o| o.distance_relative_error)),
        id_consistency: (matched_total > 0).then(|| consistent as f64 / matched_total as f64),
        mean_iou: mean(&all_iou),
    };
    Ok(Metrics {
        schema_version: METRICS_SCHEMA_VERSION,
        scenario: ds.manifest.scenario.clone(),
        mode: info.mode,
        dataset_manifest_sha256: info.dataset_manifest_sha256.clone(),
        crispness_sigma: crisp.sigma,
        summary,
        objects,
        timings_ms: run.timings,
    })
}

/// Recomputes the uncorrected clouds the run started from.
pub fn uncorrected_clouds(ds: &Dataset, cfg: &PipelineConfig) -> Result<Vec<Vec<GlobalPoint>>> {
    (0..ds.frames.len()).map(|k| labeled_frame(ds, k, cfg.detection.dilation)).collect()
}

pub fn read_run_info(run_dir: &Path) -> Result<RunInfo> {
    let path = run_dir.join("run_info.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    let found = value.get("schema_version").and_then(|v| v.as_u64());
    if found != Some(super::run::RUN_SCHEMA_VERSION as u64) {
        return Err(Error::SchemaVersion {
            expected: super::run::RUN_SCHEMA_VERSION,
            found: found.map_or(0, |f| f as u32),
            path,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::parse(&path, e))
}

/// Reads a run directory, checks it belongs to `dataset_dir`, and writes
/// `metrics.json` into `out_dir`.
pub fn cmd_eval(dataset_dir: &Path, run_dir: &Path, out_dir: &Path) -> Result<Metrics> {
    let info = read_run_info(run_dir)?;
    let digest = manifest_digest(dataset_dir)?;
    if digest != info.dataset_manifest_sha256 {
        return Err(Error::Pairing(format!(
            "run {} was produced from manifest {}, dataset {} has {}",
            run_dir.display(),
            info.dataset_manifest_sha256,
            dataset_dir.display(),
            digest
        )));
    }
    let ds = load_dataset(dataset_dir)?;
    let corrected = (0..ds.frames.len())
        .map(|k| {
            let pts = read_points_csv(&run_dir.join("frames_corrected").join(format!("{k:06}.csv")))?;
            Ok(pts
                .into_iter()
                .map(|p| GlobalPoint {
                    position: p.position,
                    stamp: p.stamp,
                    object_id: p.object_id,
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let run = RunOutput {
        tracks: read_tracks_csv(&run_dir.join("tracks_out.csv"))?,
        measurements: read_measurements_csv(&run_dir.join("measurements.csv"))?,
        corrections: read_corrections_csv(&run_dir.join("corrections.csv"))?,
        corrected,
        timings: info.timings_ms,
    };
    let uncorrected = uncorrected_clouds(&ds, &info.config)?;
    let metrics = evaluate(&ds, &run, &uncorrected, &info, &info.config.crispness)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("metrics.json");
    let text = serde_json::to_string_pretty(&metrics).map_err(|e| Error::Internal(format!("metrics: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::run::run_dataset;
    use crate::sim::{simulate, Scenario};

    fn info(cfg: &PipelineConfig) -> RunInfo {
        RunInfo {
            schema_version: 1,
            dataset_manifest_sha256: String::new(),
            scenario: "test".into(),
            mode: cfg.mode,
            frames: 0,
            timings_ms: StageTimings::default(),
            config: cfg.clone(),
        }
    }

    #[test]
    fn reports_exactly_the_ground_truth_objects() {
        let mut s = Scenario::builtin("radial").unwrap();
        s.frames = 5;
        s.scan.points_per_frame = 6000;
        let mut second = s.objects[0].clone();
        second.id = 9;
        second.center0 += Vector3::new(5.0, -6.0, 0.0);
        s.objects.push(second);
        let ds = simulate(&s, 3).unwrap();
        let cfg = PipelineConfig::default();
        let run = run_dataset(&ds, &cfg).unwrap();
        let m = evaluate(&ds, &run, &uncorrected_clouds(&ds, &cfg).unwrap(), &info(&cfg), &cfg.crispness).unwrap();
        let ids: Vec<i64> = m.objects.iter().map(|o| o.object_id).collect();
        assert_eq!(ids, vec![1, 9]);
        assert_eq!(m.summary.id_consistency, Some(1.0));
    }

    #[test]
    fn gt_velocity_correction_beats_raw_clouds() {
        let mut s = Scenario::builtin("radial").unwrap();
        s.frames = 5;
        s.scan.range_noise_sigma = 0.0;
        let ds = simulate(&s, 4).unwrap();
        let cfg = PipelineConfig::default();
        let mut run = run_dataset(&ds, &cfg).unwrap();
        let uncorrected = uncorrected_clouds(&ds, &cfg).unwrap();
        // Replace the estimated corrections by ground truth.
        let v = s.objects[0].velocity;
        for c in run.corrections.iter_mut() {
            (c.vx, c.vy, c.vz) = (v.x, v.y, v.z);
            let t0 = ds.frames[c.frame].start_stamp;
            run.corrected[c.frame] = uncorrected[c.frame]
                .iter()
                .map(|p| if p.object_id == Some(1) { crate::evaluation::undistort_object(&[*p], &v, t0)[0] } else { *p })
                .collect();
        }
        let m = evaluate(&ds, &run, &uncorrected, &info(&cfg), &cfg.crispness).unwrap();
        let o = &m.objects[0];
        assert!(o.crispness_corrected.unwrap() > o.crispness_uncorrected.unwrap() + 0.05, "{o:?}");
    }
}
