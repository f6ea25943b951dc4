//! Deterministic axis sets for orientation bins.
//!
//! Axes are sign-free: `a` and `-a` describe the same bin. Small sets are
//! tabulated; larger ones are relaxed from a Fibonacci spiral by antipodal
//! repulsion with a fixed iteration count, so the result is reproducible.

use crate::geometry::Vec3;

/// Largest supported number of Gabor axes.
pub const MAX_AXES: usize = 15;

/// `n` well-separated unit axes in the upper hemisphere.
pub fn packing(n: usize) -> Vec<Vec3> {
    assert!((1..=MAX_AXES).contains(&n), "axis count {n} out of range");
    let phi = (1.0 + 5f64.sqrt()) * 0.5;
    let raw: Vec<Vec3> = match n {
        1 => vec![Vec3::z()],
        2 => vec![Vec3::x(), Vec3::y()],
        3 => vec![Vec3::x(), Vec3::y(), Vec3::z()],
        4 => vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, 1.0),
            Vec3::new(-1.0, 1.0, 1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ],
        5 | 6 => {
            let ico = [
                Vec3::new(0.0, 1.0, phi),
                Vec3::new(0.0, -1.0, phi),
                Vec3::new(1.0, phi, 0.0),
                Vec3::new(-1.0, phi, 0.0),
                Vec3::new(phi, 0.0, 1.0),
                Vec3::new(phi, 0.0, -1.0),
            ];
            ico[..n].to_vec()
        }
        _ => relaxed(n),
    };
    raw.into_iter().map(canonical).collect()
}

/// Smallest pairwise axial angle of a set, in radians.
pub fn min_axial_angle(axes: &[Vec3]) -> f64 {
    let mut best = std::f64::consts::FRAC_PI_2;
    for i in 0..axes.len() {
        for j in i + 1..axes.len() {
            let c = axes[i].dot(&axes[j]).abs().min(1.0);
            best = best.min(c.acos());
        }
    }
    best
}

fn canonical(v: Vec3) -> Vec3 {
    let v = v.normalize();
    let flip = v.z < 0.0 || (v.z == 0.0 && (v.y < 0.0 || (v.y == 0.0 && v.x < 0.0)));
    if flip {
        -v
    } else {
        v
    }
}

fn relaxed(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut pts: Vec<Vec3> = (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Vec3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect();
    let mut step = 0.05;
    for _ in 0..3000 {
        let mut forces = vec![Vec3::zeros(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                for s in [1.0, -1.0] {
                    let d = pts[i] - pts[j] * s;
                    let r2 = d.norm_squared().max(1e-12);
                    forces[i] += d / (r2 * r2.sqrt());
                }
            }
        }
        for i in 0..n {
            let f = forces[i] - pts[i] * forces[i].dot(&pts[i]);
            pts[i] = (pts[i] + f * (step / n as f64)).normalize();
        }
        step *= 0.999;
    }
    pts
}
