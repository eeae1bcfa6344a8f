//! Motion correction of object clouds and the quality metrics used to judge it.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::egomotion::GlobalPoint;
use crate::error::{Error, Result};

/// Moves every point back to the reference time: `P − (t_i − t0)·v`.
pub fn undistort_object(points: &[GlobalPoint], v: &Vector3<f64>, t0: f64) -> Vec<GlobalPoint> {
    points
        .iter()
        .map(|p| GlobalPoint {
            position: p.position - v * (p.stamp - t0),
            ..*p
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrispnessConfig {
    /// Isotropic kernel width in meters.
    pub sigma: f64,
    /// Neighbors farther than this contribute nothing; `None` means `5σ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_neighbor_dist: Option<f64>,
}

impl Default for CrispnessConfig {
    fn default() -> Self {
        CrispnessConfig {
            sigma: 0.2,
            max_neighbor_dist: None,
        }
    }
}

impl CrispnessConfig {
    pub fn cutoff(&self) -> f64 {
        self.max_neighbor_dist.unwrap_or(5.0 * self.sigma)
    }
}

/// Exact nearest-neighbor queries over a fixed point set.
pub struct NeighborIndex {
    tree: ImmutableKdTree<f64, 3>,
    points: Vec<Vector3<f64>>,
}

impl NeighborIndex {
    pub fn new(points: &[Vector3<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("cannot index an empty cloud".into()));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("cloud contains non-finite coordinates".into()));
        }
        let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Ok(NeighborIndex {
            tree: ImmutableKdTree::new_from_slice(&raw),
            points: points.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and distance of the nearest stored point.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        let nn = self.tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
        (nn.item as usize, nn.distance.sqrt())
    }

    pub fn point(&self, i: usize) -> &Vector3<f64> {
        &self.points[i]
    }
}

/// Multi-frame crispness:
/// `(1/T²) Σ_i Σ_j (1/n_i) Σ_k exp(−d²/(2σ²))`, with `d` the distance from
/// point k of cloud i to its nearest neighbor in cloud j. Pairs `i = j`
/// contribute exactly 1.
pub fn crispness(clouds: &[Vec<Vector3<f64>>], cfg: &CrispnessConfig) -> Result<f64> {
    if !(cfg.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("crispness sigma must be positive, got {}", cfg.sigma)));
    }
    if clouds.is_empty() {
        return Err(Error::EmptyInput("no clouds to score".into()));
    }
    let indices = clouds.iter().map(|c| NeighborIndex::new(c)).collect::<Result<Vec<_>>>()?;
    let cutoff = cfg.cutoff();
    let t = clouds.len() as f64;
    let mut total = 0.0;
    for (i, cloud) in clouds.iter().enumerate() {
        for (j, index) in indices.iter().enumerate() {
            if i == j {
                total += 1.0;
                continue;
            }
            let sum: f64 = cloud
                .iter()
                .map(|p| {
                    let (_, d) = index.nearest(p);
                    if d > cutoff {
                        0.0
                    } else {
                        (-d * d / (2.0 * cfg.sigma * cfg.sigma)).exp()
                    }
                })
                .sum();
            total += sum / cloud.len() as f64;
        }
    }
    Ok(total / (t * t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityError {
    pub rmse: f64,
    pub bias: Vector3<f64>,
}

/// RMSE of the error norm and per-axis mean signed error.
pub fn velocity_error(estimated: &[Vector3<f64>], truth: &[Vector3<f64>]) -> Result<VelocityError> {
    if estimated.len() != truth.len() {
        return Err(Error::MisalignedInput(format!(
            "{} estimates against {} ground-truth velocities",
            estimated.len(),
            truth.len()
        )));
    }
    if estimated.is_empty() {
        return Err(Error::EmptyInput("no velocities to compare".into()));
    }
    let n = estimated.len() as f64;
    let errors: Vec<Vector3<f64>> = estimated.iter().zip(truth).map(|(e, t)| e - t).collect();
    Ok(VelocityError {
        rmse: (errors.iter().map(|e| e.norm_squared()).sum::<f64>() / n).sqrt(),
        bias: errors.iter().sum::<Vector3<f64>>() / n,
    })
}

/// `Σ ‖v_f‖·dt_f`.
pub fn integrated_distance(velocities: &[Vector3<f64>], dt: &[f64]) -> Result<f64> {
    if velocities.len() != dt.len() {
        return Err(Error::MisalignedInput("velocity and step counts differ".into()));
    }
    Ok(velocities.iter().zip(dt).map(|(v, d)| v.norm() * d).sum())
}

/// Polyline length through successive box centers.
pub fn trace_length(centers: &[Vector3<f64>]) -> f64 {
    centers.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.7..0.7)))
            .collect()
    }

    fn gp(p: Vector3<f64>, stamp: f64) -> GlobalPoint {
        GlobalPoint {
            position: p,
            stamp,
            object_id: Some(3),
        }
    }

    #[test]
    fn undistort_examples() {
        let pts = vec![gp(Vector3::new(1.0, 0.0, 0.0), 1.1)];
        assert_eq!(undistort_object(&pts, &Vector3::zeros(), 1.0), pts);
        let out = undistort_object(&pts, &Vector3::new(5.0, 0.0, 0.0), 1.0);
        assert!((out[0].position - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(out[0].stamp, 1.1);
        assert_eq!(out[0].object_id, Some(3));
    }

    #[test]
    fn undistort_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<GlobalPoint> = cloud(&mut rng, 100).into_iter().map(|p| gp(p, rng.gen_range(0.0..0.1))).collect();
        let v = Vector3::new(3.0, -7.0, 0.5);
        let back = undistort_object(&undistort_object(&pts, &v, 0.0), &(-v), 0.0);
        for (a, b) in back.iter().zip(&pts) {
            assert!((a.position - b.position).norm() < 1e-12);
        }
    }

    #[test]
    fn ground_truth_correction_lands_on_surface() {
        use crate::egomotion::undistort_ego;
        use crate::sim::{generate_frame, EgoMotion, ScanPatternConfig, SimObject};
        let obj = SimObject {
            id: 1,
            half_extents: Vector3::new(2.25, 0.9, 0.75),
            center0: Vector3::new(16.0, -3.0, 0.75),
            yaw: 0.4,
            velocity: Vector3::new(4.0, 3.0, 0.0),
        };
        let ego = EgoMotion {
            speed: 6.0,
            yaw_rate: 0.2,
            ..EgoMotion::default()
        }
        .trajectory(3, 0.1)
        .unwrap();
        let cfg = ScanPatternConfig {
            range_noise_sigma: 0.0,
            ..ScanPatternConfig::default()
        };
        let f = generate_frame(std::slice::from_ref(&obj), &ego, &cfg, 2, 7, None).unwrap();
        let pts = undistort_ego(&f).unwrap();
        let fixed = undistort_object(&pts, &obj.velocity, f.start_stamp);
        assert!(!fixed.is_empty());
        for p in &fixed {
            assert!(obj.surface_distance(&p.position, f.start_stamp) < 1e-9);
        }
    }

    #[test]
    fn neighbor_index_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = cloud(&mut rng, 3000);
        let index = NeighborIndex::new(&pts).unwrap();
        for _ in 0..1000 {
            let q = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0));
            let best = pts.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
            let (i, d) = index.nearest(&q);
            assert!((d - best).abs() < 1e-12);
            assert!(((index.point(i) - q).norm() - best).abs() < 1e-12);
        }
    }

    #[test]
    fn neighbor_index_survives_degenerate_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // A flat face with identical x for every point, plus many exact duplicates.
        let mut pts: Vec<Vector3<f64>> = (0..5000)
            .map(|_| Vector3::new(10.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        pts.extend(std::iter::repeat_n(Vector3::new(10.0, 0.0, 0.0), 500));
        let index = NeighborIndex::new(&pts).unwrap();
        for _ in 0..200 {
            let q = Vector3::new(rng.gen_range(9.0..11.0), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let best = pts.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min);
            assert!((index.nearest(&q).1 - best).abs() < 1e-12);
        }
    }

    #[test]
    fn crispness_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = CrispnessConfig::default();
        let a = cloud(&mut rng, 200);
        assert_eq!(crispness(std::slice::from_ref(&a), &cfg).unwrap(), 1.0);
        assert!((crispness(&[a.clone(), a.clone()], &cfg).unwrap() - 1.0).abs() < 1e-15);

        // Well-separated points shifted by δ = σ: every neighbor is the shifted twin.
        let grid: Vec<Vector3<f64>> = (0..5)
            .flat_map(|i| (0..5).map(move |j| Vector3::new(i as f64 * 3.0, j as f64 * 3.0, 0.0)))
            .collect();
        let shifted: Vec<Vector3<f64>> = grid.iter().map(|p| p + Vector3::new(0.2, 0.0, 0.0)).collect();
        let expected = (1.0 + (-0.5f64).exp()) / 2.0;
        assert!((crispness(&[grid, shifted], &cfg).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.8033).abs() < 1e-4);
    }

    #[test]
    fn crispness_rejects_empty_clouds() {
        let cfg = CrispnessConfig::default();
        assert!(matches!(crispness(&[vec![], vec![Vector3::zeros()]], &cfg), Err(Error::EmptyInput(_))));
        assert!(matches!(crispness(&[], &cfg), Err(Error::EmptyInput(_))));
    }

    proptest! {
        #[test]
        fn crispness_is_order_and_rigid_invariant(seed in 0u64..500, yaw in -3.0f64..3.0, tx in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = CrispnessConfig::default();
            let clouds: Vec<Vec<Vector3<f64>>> = (0..3).map(|_| cloud(&mut rng, 60)).collect();
            let base = crispness(&clouds, &cfg).unwrap();
            prop_assert!(base > 0.0 && base <= 1.0);
            let reversed: Vec<_> = clouds.iter().rev().cloned().collect();
            prop_assert!((crispness(&reversed, &cfg).unwrap() - base).abs() < 1e-12);
            let r = nalgebra::Rotation3::from_euler_angles(0.1, -0.2, yaw);
            let moved: Vec<Vec<Vector3<f64>>> = clouds
                .iter()
                .map(|c| c.iter().map(|p| r * p + Vector3::new(tx, 1.0, -2.0)).collect())
                .collect();
            prop_assert!((crispness(&moved, &cfg).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn velocity_error_examples() {
        let truth = vec![Vector3::new(1.0, 2.0, 0.0); 5];
        let e = velocity_error(&truth, &truth).unwrap();
        assert_eq!(e.rmse, 0.0);
        let biased: Vec<_> = truth.iter().map(|v| v + Vector3::new(0.5, 0.0, 0.0)).collect();
        let e = velocity_error(&biased, &truth).unwrap();
        assert!((e.rmse - 0.5).abs() < 1e-12);
        assert!((e.bias - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        assert!(matches!(velocity_error(&biased[..3], &truth), Err(Error::MisalignedInput(_))));
    }

    #[test]
    fn velocity_error_matches_second_implementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 37;
        let est: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-5.0..5.0))).collect();
        let gt: Vec<Vector3<f64>> = (0..n).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-5.0..5.0))).collect();
        // Column-wise accumulation, as a spreadsheet would do it.
        let mut sq = 0.0;
        let mut col = [0.0; 3];
        for a in 0..3 {
            for k in 0..n {
                let d = est[k][a] - gt[k][a];
                sq += d * d;
                col[a] += d;
            }
        }
        let e = velocity_error(&est, &gt).unwrap();
        assert!((e.rmse - (sq / n as f64).sqrt()).abs() < 1e-12);
        for a in 0..3 {
            assert!((e.bias[a] - col[a] / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn integrated_distance_examples() {
        let v = vec![Vector3::new(5.0, 0.0, 0.0); 20];
        assert!((integrated_distance(&v, &[0.1; 20]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(integrated_distance(&[Vector3::zeros(); 4], &[0.1; 4]).unwrap(), 0.0);
        let v = Vector3::new(5.0, 2.0, 0.0);
        let centers: Vec<_> = (0..=20).map(|k| v * (k as f64 * 0.1)).collect();
        assert!((trace_length(&centers) - 2.0 * 29f64.sqrt()).abs() < 1e-12);
    }
}
