//! Seeded primitives, rays and fields shared by the integration tests.

use gabor_fields::{Field, Primitive, Ray, Vec3};
use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(
        rng.random_range(-3.1..3.1),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.1..3.1),
    )
}

/// A primitive centered in `[−c, c]³` with scales in `scales` and `ω ∈ [0, ω_max]`.
pub fn primitive(rng: &mut impl Rng, c: f64, scales: (f64, f64), omega_max: f64) -> Primitive {
    let mu = Vec3::new(rng.random_range(-c..c), rng.random_range(-c..c), rng.random_range(-c..c));
    let s = Vec3::new(
        rng.random_range(scales.0..scales.1),
        rng.random_range(scales.0..scales.1),
        rng.random_range(scales.0..scales.1),
    );
    let alpha = rng.random_range(0.1..1.0);
    let omega = if omega_max > 0.0 { rng.random_range(0.0..omega_max) } else { 0.0 };
    Primitive::gabor(mu, rotation(rng), s, alpha, omega)
}

/// A ray that passes within `miss` of `target`, starting `back` units before it.
pub fn ray_near(rng: &mut impl Rng, target: &Vec3, miss: f64, back: f64) -> Ray {
    let d = unit_vector(rng);
    let off = unit_vector(rng).cross(&d);
    let off = if off.norm() > 1e-6 && miss > 0.0 { off.normalize() * rng.random_range(0.0..miss) } else { Vec3::zeros() };
    Ray::new(target + off - d * back, d)
}

/// Mixed field of `n` primitives, about a third Gaussians, spread over several
/// frequency levels and all orientation bins.
pub fn mixed_field(n: usize, seed: u64) -> Field {
    let mut r = rng(seed);
    let mut prims = Vec::with_capacity(n);
    for i in 0..n {
        let mut p = primitive(&mut r, 0.45, (0.06, 0.22), 2.0);
        if i % 3 == 0 {
            p.omega = 0.0;
        } else {
            p.omega = p.omega.max(0.3);
            p.alpha *= 0.3;
        }
        prims.push(p);
    }
    Field::with_defaults(&prims).unwrap()
}

/// Field whose density is nonnegative everywhere: every Gabor shares its
/// envelope with a Gaussian of at least its weight.
pub fn positive_field(pairs: usize, seed: u64) -> Field {
    let mut r = rng(seed);
    let mut prims = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let g = primitive(&mut r, 0.4, (0.08, 0.25), 1.5);
        let base = Primitive { omega: 0.0, alpha: g.alpha * r.random_range(1.0..2.0), ..g };
        prims.push(base);
        if g.omega > 0.05 {
            prims.push(g);
        }
    }
    Field::with_defaults(&prims).unwrap()
}

/// Rays through the middle of the unit cube, aimed at random points near the origin.
pub fn probe_rays(rng: &mut impl Rng, count: usize, spread: f64) -> Vec<Ray> {
    (0..count)
        .map(|_| {
            let target = Vec3::new(
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
            );
            ray_near(rng, &target, 0.0, 2.0)
        })
        .collect()
}
