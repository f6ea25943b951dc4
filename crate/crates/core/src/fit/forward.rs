//! Differentiable tomography of a primitive mixture.
//!
//! Each pixel integrates the whole line through every nearby kernel, so
//! `τ = Σ αᵢ Iᵢ` with the closed-form full-line integral `Iᵢ`, and the image
//! is `T = exp(−max(τ, τ_floor))`. Gradients are propagated analytically
//! through the whitening map `W = S⁻¹Rᵀ` down to the raw quaternion.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::geometry::{Mat3, Vec3};
use crate::kernel::{Kernel, Primitive};
use crate::render::transport::TAU_FLOOR;

use super::ssim::ssim;
use super::views::View;

/// Whitened distance beyond which a kernel is treated as absent from a pixel.
pub const CULL_RADIUS: f64 = 4.0;

/// Number of scalar parameters per primitive.
pub const PARAMS: usize = 12;

/// Flat parameter layout: mu 0..3, quaternion 3..7, scale 7..10, alpha 10, omega 11.
pub fn to_params(p: &Primitive) -> [f64; PARAMS] {
    let mut v = [0.0; PARAMS];
    v[0..3].copy_from_slice(&p.mu);
    v[3..7].copy_from_slice(&p.rot);
    v[7..10].copy_from_slice(&p.scale);
    v[10] = p.alpha;
    v[11] = p.omega;
    v
}

pub fn from_params(v: &[f64; PARAMS]) -> Primitive {
    Primitive {
        mu: [v[0], v[1], v[2]],
        rot: [v[3], v[4], v[5], v[6]],
        scale: [v[7], v[8], v[9]],
        alpha: v[10],
        omega: v[11],
    }
}

/// Parameter group of a flat index.
pub fn group_of(i: usize) -> Group {
    match i {
        0..=2 => Group::Mu,
        3..=6 => Group::Rot,
        7..=9 => Group::Scale,
        10 => Group::Alpha,
        _ => Group::Omega,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Mu,
    Rot,
    Scale,
    Alpha,
    Omega,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Mu, Group::Rot, Group::Scale, Group::Alpha, Group::Omega];

    pub fn name(self) -> &'static str {
        match self {
            Group::Mu => "mu",
            Group::Rot => "rot",
            Group::Scale => "scale",
            Group::Alpha => "alpha",
            Group::Omega => "omega",
        }
    }
}

/// Weights of the composite loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub freq: f64,
    /// Angular Nyquist frequency `π N_max / L`.
    pub nyquist: f64,
    pub lambda_alpha: f64,
    pub lambda_scale: f64,
    pub reg_norm: RegNorm,
}

/// How the opacity and scale penalties aggregate over primitives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegNorm {
    /// Average over primitives (and scale components).
    #[default]
    Mean,
    /// Plain sum.
    Sum,
}

impl LossWeights {
    pub fn new(n_max: usize, domain_len: f64) -> Self {
        LossWeights {
            l1: 0.8,
            ssim: 0.2,
            freq: 1.0,
            nyquist: std::f64::consts::PI * n_max as f64 / domain_len,
            lambda_alpha: 1e-5,
            lambda_scale: 0.02,
            reg_norm: RegNorm::Mean,
        }
    }

    pub fn images_only(mut self) -> Self {
        self.freq = 0.0;
        self.lambda_alpha = 0.0;
        self.lambda_scale = 0.0;
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub l1: f64,
    /// Mean `1 − SSIM` over views.
    pub dssim: f64,
    pub freq: f64,
    pub reg_alpha: f64,
    pub reg_scale: f64,
    /// PSNR of the predicted images against the references.
    pub psnr: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GradientError {
    #[error("non-finite gradient for primitive {prim}, parameter {param}")]
    NonFinite { prim: usize, param: &'static str },
    #[error("image shape mismatch: view {view} has {got} pixels, expected {expected}")]
    Shape { view: usize, got: usize, expected: usize },
}

struct Prepared {
    kernel: Option<Kernel>,
    rmat: Mat3,
    inv_s: Vec3,
}

fn prepare(prims: &[Primitive]) -> Vec<Prepared> {
    prims
        .iter()
        .map(|p| {
            // the raw quaternion is only defined up to scale
            let mut unit = *p;
            let n = p.rot.iter().map(|v| v * v).sum::<f64>().sqrt();
            unit.rot.iter_mut().for_each(|v| *v /= n);
            let kernel = Kernel::new(unit).ok();
            Prepared {
                kernel,
                rmat: p.rotation().to_rotation_matrix().into_inner(),
                inv_s: Vec3::from(p.scale).map(|s| 1.0 / s),
            }
        })
        .collect()
}

/// Pixel rectangle `[x0, x1) × [y0, y1)` that can see a kernel.
fn footprint(k: &Kernel, view: &View) -> Option<(usize, usize, usize, usize)> {
    let b = k.bounds(CULL_RADIUS);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for c in 0..8 {
        let p = Vec3::new(
            if c & 1 == 0 { b.min.x } else { b.max.x },
            if c & 2 == 0 { b.min.y } else { b.max.y },
            if c & 4 == 0 { b.min.z } else { b.max.z },
        );
        match view.frame.project(&p) {
            Some(q) => {
                for a in 0..2 {
                    lo[a] = lo[a].min(q[a]);
                    hi[a] = hi[a].max(q[a]);
                }
            }
            None => return Some((0, view.width, 0, view.height)),
        }
    }
    let clip = |v: f64, n: usize| v.clamp(0.0, n as f64);
    let x0 = clip(lo[0].floor(), view.width) as usize;
    let x1 = clip(hi[0].ceil() + 1.0, view.width) as usize;
    let y0 = clip(lo[1].floor(), view.height) as usize;
    let y1 = clip(hi[1].ceil() + 1.0, view.height) as usize;
    (x0 < x1 && y0 < y1).then_some((x0, x1, y0, y1))
}

/// Per-pixel scalars of one kernel along one ray.
struct Local {
    value: f64,
    /// dI/du, dI/dw, dI/dk for the whitened offset, direction and modulation.
    du: Vec3,
    dw: Vec3,
    dk: Vec3,
}

#[inline]
fn local(k: &Kernel, u: &Vec3, w: &Vec3, kw: &Vec3, want_grad: bool) -> Option<Local> {
    let jac = w.norm();
    let wh = w / jac;
    let b = u.dot(&wh);
    let c = u.norm_squared();
    let perp2 = (c - b * b).max(0.0);
    if perp2 > CULL_RADIUS * CULL_RADIUS {
        return None;
    }
    let om = kw.dot(&wh);
    let d = kw.dot(u);
    let phi = d - om * b;
    let a = 1.0 / (std::f64::consts::TAU * k.det_sqrt() * jac);
    let e = (-0.5 * (perp2 + om * om)).exp();
    let value = a * e * phi.cos();
    if !want_grad {
        return Some(Local { value, du: Vec3::zeros(), dw: Vec3::zeros(), dk: Vec3::zeros() });
    }
    let i_phi = -a * e * phi.sin();
    let u_perp = u - wh * b;
    let k_perp = kw - wh * om;
    let dq_du = u_perp * 2.0;
    let dq_dw = (u_perp * (-2.0 * b) + k_perp * (2.0 * om)) / jac;
    let dq_dk = wh * (2.0 * om);
    let dphi_du = k_perp;
    let dphi_dw = (k_perp * (-b) - u_perp * om) / jac;
    let dphi_dk = u_perp;
    Some(Local {
        value,
        du: dq_du * (-0.5 * value) + dphi_du * i_phi,
        dw: -wh * (value / jac) + dq_dw * (-0.5 * value) + dphi_dw * i_phi,
        dk: dq_dk * (-0.5 * value) + dphi_dk * i_phi,
    })
}

/// Optical depth image of one view.
pub fn tau_image(prims: &[Primitive], view: &View) -> Vec<f64> {
    tau_image_prepared(&prepare(prims), view)
}

fn tau_image_prepared(prep: &[Prepared], view: &View) -> Vec<f64> {
    let mut tau = vec![0.0; view.pixels()];
    let origin = view.frame.origin();
    for p in prep {
        let Some(k) = &p.kernel else { continue };
        let Some((x0, x1, y0, y1)) = footprint(k, view) else { continue };
        let wmat = k.whitening();
        let u = wmat * (origin - k.mean());
        let kw = Vec3::repeat(k.primitive().omega);
        for y in y0..y1 {
            for x in x0..x1 {
                let dir = view.frame.pixel_center(x, y).dir;
                if let Some(l) = local(k, &u, &(wmat * dir), &kw, false) {
                    tau[y * view.width + x] += k.alpha() * l.value;
                }
            }
        }
    }
    tau
}

/// Transmittance image of one view.
pub fn render_view(prims: &[Primitive], view: &View) -> Vec<f64> {
    tau_image(prims, view).into_iter().map(|t| (-t.max(TAU_FLOOR)).exp()).collect()
}

/// Peak-1 PSNR between two images.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Derivative of the homogeneous rotation matrix with respect to the raw
/// quaternion `(w, x, y, z)`.
fn rotation_jacobian(q: &[f64; 4]) -> [Mat3; 4] {
    let [w, x, y, z] = *q;
    let n = w * w + x * x + y * y + z * z;
    let m = Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    );
    let dm = [
        Matrix3::new(2.0 * w, -2.0 * z, 2.0 * y, 2.0 * z, 2.0 * w, -2.0 * x, -2.0 * y, 2.0 * x, 2.0 * w),
        Matrix3::new(2.0 * x, 2.0 * y, 2.0 * z, 2.0 * y, -2.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -2.0 * x),
        Matrix3::new(-2.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 2.0 * y, 2.0 * z, -2.0 * w, 2.0 * z, -2.0 * y),
        Matrix3::new(-2.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -2.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 2.0 * z),
    ];
    let qv = [w, x, y, z];
    [0, 1, 2, 3].map(|a| dm[a] / n - m * (2.0 * qv[a] / (n * n)))
}

/// Per-view partial sums for one primitive.
#[derive(Clone, Copy)]
struct Accum {
    du: Vec3,
    gw: Mat3,
    alpha: f64,
    omega: f64,
}

impl Default for Accum {
    fn default() -> Self {
        Accum { du: Vec3::zeros(), gw: Mat3::zeros(), alpha: 0.0, omega: 0.0 }
    }
}

/// Loss of `prims` against reference images, with optional gradients.
pub fn loss_and_grad(
    prims: &[Primitive],
    views: &[View],
    refs: &[Vec<f64>],
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(LossTerms, Option<Vec<[f64; PARAMS]>>), GradientError> {
    for (v, (view, r)) in views.iter().zip(refs).enumerate() {
        if r.len() != view.pixels() {
            return Err(GradientError::Shape { view: v, got: r.len(), expected: view.pixels() });
        }
    }
    let prep = prepare(prims);
    let total_px: usize = views.iter().map(View::pixels).sum();
    let per_view: Vec<(f64, f64, f64, Vec<Accum>)> = views
        .par_iter()
        .zip(refs.par_iter())
        .map(|(view, r)| {
            let tau = tau_image_prepared(&prep, view);
            let img: Vec<f64> = tau.iter().map(|t| (-t.max(TAU_FLOOR)).exp()).collect();
            let l1: f64 = img.iter().zip(r).map(|(p, q)| (p - q).abs()).sum();
            let sq: f64 = img.iter().zip(r).map(|(p, q)| (p - q) * (p - q)).sum();
            let (s, sg) = ssim(&img, r, view.width, view.height, want_grad);
            if !want_grad {
                return (l1, sq, s, Vec::new());
            }
            let sg = sg.unwrap();
            let nv = views.len() as f64;
            // dL/dτ per pixel
            let dtau: Vec<f64> = (0..view.pixels())
                .map(|i| {
                    let d = img[i] - r[i];
                    let sign = if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
                    let dl_dt = weights.l1 * sign / total_px as f64 - weights.ssim * sg[i] / nv;
                    if tau[i] < TAU_FLOOR { 0.0 } else { -img[i] * dl_dt }
                })
                .collect();
            let origin = view.frame.origin();
            let acc = prep
                .iter()
                .map(|p| {
                    let mut a = Accum::default();
                    let Some(k) = &p.kernel else { return a };
                    let Some((x0, x1, y0, y1)) = footprint(k, view) else { return a };
                    let wmat = k.whitening();
                    let offset = origin - k.mean();
                    let u = wmat * offset;
                    let kw = Vec3::repeat(k.primitive().omega);
                    let mut sum_dw_v = Mat3::zeros();
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let g = dtau[y * view.width + x];
                            if g == 0.0 {
                                continue;
                            }
                            let dir = view.frame.pixel_center(x, y).dir;
                            if let Some(l) = local(k, &u, &(wmat * dir), &kw, true) {
                                let ga = g * k.alpha();
                                a.alpha += g * l.value;
                                a.du += l.du * ga;
                                sum_dw_v += (l.dw * ga) * dir.transpose();
                                a.omega += ga * (l.dk.x + l.dk.y + l.dk.z);
                            }
                        }
                    }
                    a.gw = a.du * offset.transpose() + sum_dw_v;
                    a
                })
                .collect();
            (l1, sq, s, acc)
        })
        .collect();
    let l1 = per_view.iter().map(|v| v.0).sum::<f64>() / total_px as f64;
    let mse = per_view.iter().map(|v| v.1).sum::<f64>() / total_px as f64;
    let dssim = per_view.iter().map(|v| 1.0 - v.2).sum::<f64>() / views.len() as f64;
    let mut terms = LossTerms { l1, dssim, psnr: if mse > 0.0 { -10.0 * mse.log10() } else { f64::INFINITY }, ..Default::default() };
    let (norm_alpha, norm_scale) = match weights.reg_norm {
        RegNorm::Sum => (1.0, 1.0),
        RegNorm::Mean if prims.is_empty() => (1.0, 1.0),
        RegNorm::Mean => (1.0 / prims.len() as f64, 1.0 / (3 * prims.len()) as f64),
    };
    for p in prims {
        terms.freq += sigmoid(10.0 * (p.peak_frequency() - weights.nyquist));
        terms.reg_alpha += p.alpha.abs() * norm_alpha;
        terms.reg_scale += p.scale.iter().map(|s| s.abs()).sum::<f64>() * norm_scale;
    }
    terms.total = weights.l1 * l1
        + weights.ssim * dssim
        + weights.freq * terms.freq
        + weights.lambda_alpha * terms.reg_alpha
        + weights.lambda_scale * terms.reg_scale;
    if !want_grad {
        return Ok((terms, None));
    }
    let mut grads = vec![[0.0; PARAMS]; prims.len()];
    for (i, (p, pr)) in prims.iter().zip(&prep).enumerate() {
        let mut a = Accum::default();
        for v in &per_view {
            let x = &v.3[i];
            a.du += x.du;
            a.gw += x.gw;
            a.alpha += x.alpha;
            a.omega += x.omega;
        }
        let g = &mut grads[i];
        if pr.kernel.is_some() {
            let wmat = Mat3::from_diagonal(&pr.inv_s) * pr.rmat.transpose();
            let dmu = -(wmat.transpose() * a.du);
            g[0..3].copy_from_slice(dmu.as_slice());
            // dI/dW → dI/dR (R_ji / s_i = W_ij) and dI/ds
            let gr = (Mat3::from_diagonal(&pr.inv_s) * a.gw).transpose();
            for (q, dr) in rotation_jacobian(&p.rot).iter().enumerate() {
                g[3 + q] = gr.component_mul(dr).sum();
            }
            for s in 0..3 {
                let through_w: f64 = (0..3).map(|j| a.gw[(s, j)] * wmat[(s, j)]).sum();
                // the determinant term contributes −α·I/s per pixel, i.e. −a.alpha·α/s
                g[7 + s] = -(through_w + a.alpha * p.alpha) * pr.inv_s[s];
            }
            g[10] = a.alpha;
            g[11] = a.omega;
        }
        // regularizers
        let s2: f64 = p.scale.iter().map(|s| 1.0 / (s * s)).sum();
        let f0 = p.omega * s2.sqrt();
        let sg = sigmoid(10.0 * (f0 - weights.nyquist));
        let df0 = weights.freq * 10.0 * sg * (1.0 - sg);
        if df0 != 0.0 && s2 > 0.0 {
            g[11] += df0 * s2.sqrt();
            for s in 0..3 {
                g[7 + s] += df0 * (-p.omega / (p.scale[s].powi(3) * s2.sqrt()));
            }
        }
        g[10] += weights.lambda_alpha * norm_alpha * p.alpha.signum();
        for s in 0..3 {
            g[7 + s] += weights.lambda_scale * norm_scale * p.scale[s].signum();
        }
        for (j, v) in g.iter().enumerate() {
            if !v.is_finite() {
                return Err(GradientError::NonFinite { prim: i, param: group_of(j).name() });
            }
        }
    }
    Ok((terms, Some(grads)))
}
