//! Finite-difference oracle for the fit gradients.

use gabor_fields::fit::forward::{self, Group, LossWeights, PARAMS};
use gabor_fields::fit::View;
use gabor_fields::render::Camera;
use gabor_fields::{Primitive, Vec3};
use nalgebra::UnitQuaternion;

/// Five primitives (two Gaussians, three Gabors) near the origin.
pub fn five_prims() -> Vec<Primitive> {
    let q = |r: f64, p: f64, y: f64| UnitQuaternion::from_euler_angles(r, p, y);
    vec![
        Primitive::gabor(Vec3::new(0.05, -0.02, 0.0), q(0.2, 0.1, -0.3), Vec3::new(0.3, 0.22, 0.26), 0.9, 0.0),
        Primitive::gabor(Vec3::new(-0.25, 0.15, 0.1), q(-0.4, 0.3, 0.2), Vec3::new(0.18, 0.12, 0.15), 0.5, 0.0),
        Primitive::gabor(Vec3::new(0.2, 0.1, -0.1), q(0.7, -0.2, 0.9), Vec3::new(0.12, 0.09, 0.1), 0.2, 0.9),
        Primitive::gabor(Vec3::new(-0.1, -0.2, 0.15), q(-0.3, 0.8, 0.1), Vec3::new(0.1, 0.14, 0.08), 0.15, 1.2),
        Primitive::gabor(Vec3::new(0.0, 0.25, -0.2), q(1.1, 0.4, -0.6), Vec3::new(0.09, 0.07, 0.11), 0.1, 0.8),
    ]
}

pub fn small_views(res: usize) -> Vec<View> {
    [Vec3::new(0.3, 0.2, 2.5), Vec3::new(-2.2, 0.6, 0.9)]
        .iter()
        .map(|&p| View::new(Camera::looking(p, Vec3::zeros(), 40.0), res, res))
        .collect()
}

/// References from a perturbed copy of the fixture.
pub fn references(prims: &[Primitive], views: &[View]) -> Vec<Vec<f64>> {
    let shifted: Vec<Primitive> = prims
        .iter()
        .map(|p| {
            let mut q = *p;
            q.mu[0] += 0.04;
            q.alpha *= 1.2;
            q
        })
        .collect();
    views.iter().map(|v| forward::render_view(&shifted, v)).collect()
}

/// Worst relative error per parameter group between the analytic gradient
/// and central differences with relative step `rel_h`.
///
/// The error of a component is `|a − f| / max(|a|, |f|, floor)`, where `floor`
/// is 1e-3 of the largest magnitude in its group, so components that are
/// numerically zero do not dominate.
pub fn gradient_errors(
    prims: &[Primitive],
    views: &[View],
    refs: &[Vec<f64>],
    weights: &LossWeights,
    rel_h: f64,
) -> Vec<(Group, f64)> {
    let (_, g) = forward::loss_and_grad(prims, views, refs, weights, true).unwrap();
    let analytic = g.unwrap();
    let loss = |ps: &[Primitive]| forward::loss_and_grad(ps, views, refs, weights, false).unwrap().0.total;
    let mut pairs: Vec<(Group, f64, f64)> = Vec::new();
    for (i, p) in prims.iter().enumerate() {
        let x = forward::to_params(p);
        for j in 0..PARAMS {
            let group = forward::group_of(j);
            if group == Group::Omega && p.is_gaussian() {
                continue;
            }
            let h = rel_h * x[j].abs().max(0.1);
            let eval = |d: f64| {
                let mut y: [f64; PARAMS] = x;
                y[j] += d;
                let mut ps = prims.to_vec();
                ps[i] = forward::from_params(&y);
                loss(&ps)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            pairs.push((group, analytic[i][j], fd));
        }
    }
    Group::ALL
        .iter()
        .map(|&grp| {
            let sel: Vec<_> = pairs.iter().filter(|p| p.0 == grp).collect();
            let top = sel.iter().map(|p| p.1.abs().max(p.2.abs())).fold(0.0, f64::max);
            let err = sel
                .iter()
                .map(|p| (p.1 - p.2).abs() / p.1.abs().max(p.2.abs()).max(1e-3 * top).max(1e-300))
                .fold(0.0, f64::max);
            (grp, err)
        })
        .collect()
}
