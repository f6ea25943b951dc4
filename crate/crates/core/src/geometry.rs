//! Vector aliases, rays and axis-aligned boxes.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::field::VisibilityMask;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A world-space ray `x(t) = origin + dir * t`, restricted to `[t_min, t_max]`.
///
/// The mask selects which pyramid levels the ray can see.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_min: f64,
    pub t_max: f64,
    pub mask: VisibilityMask,
}

impl Ray {
    /// Builds a ray with a normalized direction over `[0, inf)` seeing every level.
    ///
    /// A zero direction is kept as-is so that the kernels can report it.
    pub fn new(origin: Vec3, dir: Vec3) -> Self {
        let n = dir.norm();
        let dir = if n > 0.0 { dir / n } else { dir };
        Ray {
            origin,
            dir,
            t_min: 0.0,
            t_max: f64::INFINITY,
            mask: VisibilityMask::ALL,
        }
    }

    pub fn with_range(mut self, t_min: f64, t_max: f64) -> Self {
        self.t_min = t_min;
        self.t_max = t_max;
        self
    }

    pub fn with_mask(mut self, mask: VisibilityMask) -> Self {
        self.mask = mask;
        self
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vector3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        max: Vector3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn cube(half: f64) -> Self {
        Aabb::new(Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn grow(&mut self, other: &Aabb) {
        *self = self.union(other);
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Slab test. Returns the parametric overlap of the ray with the box.
    #[inline]
    pub fn intersect(&self, origin: &Vec3, inv_dir: &Vec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
        let mut t0 = t_min;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // NaN from 0 * inf means the origin sits on a slab plane of a parallel ray
            if lo.is_nan() || hi.is_nan() {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_hit_and_miss() {
        let b = Aabb::cube(1.0);
        let o = Vec3::new(-5.0, 0.0, 0.0);
        let d = Vec3::new(1.0, 0.0, 0.0);
        let inv = d.map(|v| 1.0 / v);
        let (t0, t1) = b.intersect(&o, &inv, 0.0, f64::INFINITY).unwrap();
        assert!((t0 - 4.0).abs() < 1e-12 && (t1 - 6.0).abs() < 1e-12);
        let o2 = Vec3::new(-5.0, 2.0, 0.0);
        assert!(b.intersect(&o2, &inv, 0.0, f64::INFINITY).is_none());
    }

    #[test]
    fn ray_normalizes() {
        let r = Ray::new(Vec3::zeros(), Vec3::new(0.0, 3.0, 4.0));
        assert!((r.dir.norm() - 1.0).abs() < 1e-15);
    }
}
