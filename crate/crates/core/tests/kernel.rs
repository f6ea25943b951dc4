mod common;

use common::fixtures::{primitive, ray_near, rng};
use common::quad;
use gabor_fields::kernel::{erf_complex_re, erf_exact, DEFAULT_MIDPOINT_THRESHOLD, MAX_SERIES_TERMS};
use gabor_fields::{Mat3, Primitive, Ray, Vec3};
use nalgebra::UnitQuaternion;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

/// Density from the dense covariance, without the whitening shortcut.
fn dense_eval(p: &Primitive, x: &Vec3) -> f64 {
    let r: Mat3 = p.rotation().to_rotation_matrix().into_inner();
    let s = Mat3::from_diagonal(&Vec3::from(p.scale));
    let cov = r * s * s * r.transpose();
    let d = x - p.mean();
    let q = d.dot(&(cov.try_inverse().unwrap() * d));
    let g = (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powf(1.5) * cov.determinant().sqrt());
    let k = r * Vec3::from(p.scale).map(|s| 1.0 / s) * p.omega;
    g * k.dot(&d).cos()
}

#[test]
fn eval_matches_dense_covariance() {
    let mut r = rng(11);
    for _ in 0..500 {
        let p = primitive(&mut r, 1.0, (0.05, 0.6), 3.0);
        let k = p.kernel().unwrap();
        let x = p.mean() + Vec3::from(p.scale).norm() * Vec3::new(r.random(), r.random(), r.random());
        let a = k.eval(&x);
        let b = dense_eval(&p, &x);
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-3), "{a} vs {b}");
    }
}

#[test]
fn whitened_ray_reproduces_world_density() {
    let mut r = rng(12);
    for _ in 0..200 {
        let p = primitive(&mut r, 0.5, (0.05, 0.4), 2.0);
        let k = p.kernel().unwrap();
        let ray = ray_near(&mut r, &p.mean(), 0.3, 1.0);
        let wr = k.whiten(&ray).unwrap();
        for t in [0.2, 0.9, 1.0, 1.4] {
            let u = wr.u(t);
            let along = (-0.5 * (u * u + wr.perp2())).exp() / ((2.0 * std::f64::consts::PI).powf(1.5) * k.det_sqrt());
            let want = along * (wr.phase() + wr.omega * u).cos();
            let got = k.eval(&ray.at(t));
            assert!((got - want).abs() < 1e-9 * along.max(1e-6), "t={t}: {got} vs {want}");
        }
    }
}

#[test]
fn erf_reference_values() {
    assert!((erf_complex_re(Complex64::new(1.0, 0.0), MAX_SERIES_TERMS) - 0.842_700_79).abs() < 1e-6);
    assert!((erf_complex_re(Complex64::new(0.5, 0.0), MAX_SERIES_TERMS) - 0.520_499_88).abs() < 1e-6);
    let mut r = rng(13);
    for _ in 0..200 {
        let z = Complex64::new(r.random_range(-1.2..1.2), r.random_range(-1.2..1.2));
        let a = erf_complex_re(z, MAX_SERIES_TERMS);
        let b = erf_exact(z).re;
        assert!((a - b).abs() < 1e-4, "{z}: {a} vs {b}");
    }
}

#[test]
fn whole_space_integral_of_isotropic_gabor() {
    let p = Primitive::gabor(Vec3::zeros(), UnitQuaternion::identity(), Vec3::repeat(0.3), 1.0, 0.0);
    assert_eq!(p.whole_space_integral(), 1.0);
    let p = Primitive { omega: 1.0, alpha: 2.0, ..p };
    assert!((p.whole_space_integral() - 0.446_26).abs() < 1e-5);

    // Monte Carlo over the envelope: E[cos(k·x)] under N(0, Σ)
    let k = p.kernel().unwrap();
    let mut r = rng(14);
    let mut m = common::stats::Moments::default();
    for _ in 0..200_000 {
        let z: Vec3 = Vec3::from_fn(|_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r));
        let x = Vec3::from(p.scale).component_mul(&z);
        m.push(p.alpha * k.modulation().dot(&x).cos());
    }
    let got = m.mean();
    assert!((got - p.whole_space_integral()).abs() < 3.0 * m.std_error() + 1e-9, "{got}");
}

#[test]
fn fast_segments_agree_with_exact() {
    let mut r = rng(15);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let p = primitive(&mut r, 0.3, (0.08, 0.4), 1.5);
        let k = p.kernel().unwrap();
        let ray = ray_near(&mut r, &p.mean(), 0.2, 1.0);
        let a = r.random_range(0.4..1.0);
        let b = a + r.random_range(0.0..0.6);
        let exact = k.integral_segment(&ray, a, b).unwrap();
        let fast = k.integral_segment_fast(&ray, a, b, MAX_SERIES_TERMS, DEFAULT_MIDPOINT_THRESHOLD).unwrap();
        worst = worst.max((exact - fast).abs() / k.integral_segment(&ray, 0.0, 2.0).unwrap().abs().max(1.0));
    }
    assert!(worst < 1e-6, "worst {worst}");
}

#[test]
fn tiny_segments_take_the_midpoint() {
    let p = Primitive::gaussian(Vec3::zeros(), Vec3::new(0.2, 0.3, 0.4), 1.0);
    let k = p.kernel().unwrap();
    let ray = Ray::new(Vec3::new(-1.0, 0.05, 0.0), Vec3::x());
    let (t0, t1) = (1.0, 1.0 + 1e-6);
    let v = k.integral_segment_fast(&ray, t0, t1, MAX_SERIES_TERMS, DEFAULT_MIDPOINT_THRESHOLD).unwrap();
    assert_eq!(v, k.eval(&ray.at(0.5 * (t0 + t1))) * (t1 - t0));
    assert!(k.integral_segment(&ray, 2.0, 1.0).is_err());
}

#[test]
fn degenerate_primitives_are_rejected() {
    let bad = Primitive::gaussian(Vec3::zeros(), Vec3::new(1.0, 1e-7, 1.0), 1.0);
    assert!(bad.kernel().is_err());
    let nan = Primitive::gaussian(Vec3::new(f64::NAN, 0.0, 0.0), Vec3::repeat(0.1), 1.0);
    assert!(nan.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segment_integral_matches_quadrature(seed in 0u64..1_000_000, a in 0.0f64..1.5, len in 0.0f64..1.5) {
        let mut r = rng(seed);
        let p = primitive(&mut r, 0.3, (0.06, 0.4), 2.5);
        let k = p.kernel().unwrap();
        let ray = ray_near(&mut r, &p.mean(), 0.3, 1.0);
        let got = k.integral_segment(&ray, a, a + len).unwrap();
        let want = quad::integrate(|t| k.eval(&ray.at(t)), a, a + len, 1e-10, 1e-13);
        prop_assert!((got - want).abs() <= 1e-7 * want.abs() + 1e-11, "{} vs {}", got, want);
    }
}
