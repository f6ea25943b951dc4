//! Dense ray marching of the summed field density.

use gabor_fields::{Field, Ray};

/// Density `Σ αᵢ gᵢ(x)` by direct summation over every primitive.
pub fn density(field: &Field, x: &gabor_fields::Vec3) -> f64 {
    field.kernels().iter().map(|k| k.alpha() * k.eval(x)).sum()
}

/// Density with every kernel cut off outside its whitened radius `extent`,
/// the medium a renderer with fixed extents integrates.
pub fn truncated_density(field: &Field, x: &gabor_fields::Vec3, extent: f64) -> f64 {
    field
        .kernels()
        .iter()
        .filter(|k| (k.whitening() * (x - k.mean())).norm() <= extent)
        .map(|k| k.alpha() * k.eval(x))
        .sum()
}

/// Cumulative optical depth of `rho` at `t0 + i·dt`, trapezoid rule, `n` steps.
pub fn cumulative_tau(rho: impl Fn(&gabor_fields::Vec3) -> f64, ray: &Ray, t0: f64, dt: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    let mut prev = rho(&ray.at(t0));
    out.push(0.0);
    for i in 1..=n {
        let cur = rho(&ray.at(t0 + dt * i as f64));
        acc += 0.5 * dt * (prev + cur);
        out.push(acc);
        prev = cur;
    }
    out
}

/// Optical depth over `[t0, t1]` with step close to `dt`, Simpson's rule.
pub fn optical_depth(field: &Field, ray: &Ray, t0: f64, t1: f64, dt: f64) -> f64 {
    optical_depth_with(|x| density(field, x), ray, t0, t1, dt)
}

pub fn optical_depth_with(rho: impl Fn(&gabor_fields::Vec3) -> f64, ray: &Ray, t0: f64, t1: f64, dt: f64) -> f64 {
    let n = (((t1 - t0) / dt).ceil() as usize).max(2).next_multiple_of(2);
    let h = (t1 - t0) / n as f64;
    let mut acc = rho(&ray.at(t0)) + rho(&ray.at(t1));
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * rho(&ray.at(t0 + h * i as f64));
    }
    acc * h / 3.0
}

/// Free-flight CDF `1 − exp(−max_{s≤t} τ(s))` on the march lattice.
pub fn distance_cdf(cum_tau: &[f64]) -> Vec<f64> {
    let mut running: f64 = 0.0;
    cum_tau
        .iter()
        .map(|&t| {
            running = running.max(t);
            1.0 - (-running).exp()
        })
        .collect()
}
