use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::Rotation;

/// Oriented box moving with constant velocity and fixed yaw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimObject {
    pub id: i64,
    /// (l/2, w/2, h/2) in the box frame; `l` runs along the heading.
    pub half_extents: Vector3<f64>,
    /// Global center at t = 0.
    pub center0: Vector3<f64>,
    pub yaw: f64,
    pub velocity: Vector3<f64>,
}

impl SimObject {
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        self.center0 + self.velocity * t
    }

    pub fn orientation(&self) -> Rotation {
        Rotation::from_yaw(self.yaw)
    }

    /// Full dimensions (l, w, h).
    pub fn dims(&self) -> Vector3<f64> {
        self.half_extents * 2.0
    }

    /// Global-frame point expressed in the box frame at time `t`.
    pub fn to_box_frame(&self, p: &Vector3<f64>, t: f64) -> Vector3<f64> {
        self.orientation().transpose().rotate(&(p - self.center_at(t)))
    }

    /// Distance from `p` to the box surface at time `t` (zero on the surface).
    pub fn surface_distance(&self, p: &Vector3<f64>, t: f64) -> f64 {
        let local = self.to_box_frame(p, t);
        let q = local.abs() - self.half_extents;
        let outside = q.map(|c| c.max(0.0)).norm();
        let inside = q.max().min(0.0);
        (outside + inside).abs()
    }
}

/// Nearest positive-range intersection of a ray with `obj` at time `t` (slab method).
pub fn raycast_box(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    obj: &SimObject,
    t: f64,
) -> Option<(Vector3<f64>, f64)> {
    let rot_t = obj.orientation().transpose();
    let o = rot_t.rotate(&(origin - obj.center_at(t)));
    let d = rot_t.rotate(dir);

    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        let h = obj.half_extents[axis];
        if d[axis].abs() < 1e-300 {
            if o[axis].abs() > h {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let (a, b) = ((-h - o[axis]) * inv, (h - o[axis]) * inv);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        t_near = t_near.max(lo);
        t_far = t_far.min(hi);
        if t_near > t_far {
            return None;
        }
    }
    let range = if t_near > 0.0 {
        t_near
    } else if t_far > 0.0 {
        t_far
    } else {
        return None;
    };
    Some((origin + dir * range, range))
}
