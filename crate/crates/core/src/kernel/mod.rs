//! Per-primitive mathematics for anisotropic Gaussian and Gabor kernels.
//!
//! A kernel is a normalized Gaussian envelope with covariance
//! `Σ = R S Sᵀ Rᵀ`, multiplied by a plane wave `cos(ω⃗ᵀ(x − μ))`. The wave vector
//! is tied to the envelope: `ω⃗ = R S⁻¹ (ω, ω, ω)ᵀ`, so a single scalar sets the
//! modulation and `ω = 0` gives a plain Gaussian.
//!
//! Everything that integrates along a ray works in the whitened frame of the
//! kernel, where the envelope is the unit isotropic Gaussian. See
//! [`Kernel::whiten`].

mod erf;

pub use erf::{erf_complex_re, erf_exact, erf_series, MAX_SERIES_TERMS, SERIES_EARLY_EXIT};

use nalgebra::{Quaternion, UnitQuaternion};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::f64::consts::{PI, TAU};

use crate::geometry::{Aabb, Mat3, Ray, Vec3};

pub type ComplexScalar = Complex64;

/// Largest allowed ratio between the biggest and smallest principal scale.
pub const MAX_CONDITION: f64 = 1e6;

/// Default whitened segment length under which the fast path uses the midpoint rule.
pub const DEFAULT_MIDPOINT_THRESHOLD: f64 = 1e-4;

/// Support radius used when a primitive is not clamped adaptively.
pub const SIGMA_EXTENT: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("singular covariance: scales {scale:?} exceed the condition limit")]
    SingularCovariance { scale: [f64; 3] },
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("invalid ray: zero direction")]
    InvalidRay,
    #[error("invalid segment bounds: t0 = {t0} > t1 = {t1}")]
    InvalidBounds { t0: f64, t1: f64 },
}

/// One Gaussian or Gabor kernel, as stored.
///
/// The quaternion is kept exactly as given (`w, x, y, z` in [`Primitive::quat`]
/// order); it is normalized only when the rotation matrix is formed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub mu: [f64; 3],
    /// Rotation quaternion `(w, x, y, z)`.
    pub rot: [f64; 4],
    pub scale: [f64; 3],
    pub alpha: f64,
    pub omega: f64,
}

impl Primitive {
    pub fn gaussian(mu: Vec3, scale: Vec3, alpha: f64) -> Self {
        Primitive {
            mu: mu.into(),
            rot: [1.0, 0.0, 0.0, 0.0],
            scale: scale.into(),
            alpha,
            omega: 0.0,
        }
    }

    pub fn gabor(mu: Vec3, rot: UnitQuaternion<f64>, scale: Vec3, alpha: f64, omega: f64) -> Self {
        let q = rot.into_inner();
        Primitive {
            mu: mu.into(),
            rot: [q.w, q.i, q.j, q.k],
            scale: scale.into(),
            alpha,
            omega,
        }
    }

    pub fn mean(&self) -> Vec3 {
        Vec3::from(self.mu)
    }

    pub fn scales(&self) -> Vec3 {
        Vec3::from(self.scale)
    }

    pub fn quaternion(&self) -> Quaternion<f64> {
        let [w, x, y, z] = self.rot;
        Quaternion::new(w, x, y, z)
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(self.quaternion())
    }

    pub fn is_gaussian(&self) -> bool {
        self.omega == 0.0
    }

    /// Peak modulation frequency `f0 = ω ‖S⁻¹(1,1,1)‖` in radians per world unit.
    pub fn peak_frequency(&self) -> f64 {
        let [a, b, c] = self.scale;
        self.omega * (1.0 / (a * a) + 1.0 / (b * b) + 1.0 / (c * c)).sqrt()
    }

    /// Integral of `alpha * g` over all of space, `α·exp(−3ω²/2)`.
    pub fn whole_space_integral(&self) -> f64 {
        self.alpha * (-1.5 * self.omega * self.omega).exp()
    }

    /// Rounds every parameter to `f32` precision.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| v as f32 as f64;
        Primitive {
            mu: self.mu.map(q),
            rot: self.rot.map(q),
            scale: self.scale.map(q),
            alpha: q(self.alpha),
            omega: q(self.omega),
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let finite = self.mu.iter().chain(&self.rot).chain(&self.scale).all(|v| v.is_finite())
            && self.alpha.is_finite()
            && self.omega.is_finite();
        if !finite {
            return Err(KernelError::InvalidPrimitive("non-finite parameter".into()));
        }
        let qn = self.rot.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(KernelError::InvalidPrimitive(format!("quaternion norm {qn} is not 1")));
        }
        if self.alpha < 0.0 {
            return Err(KernelError::InvalidPrimitive(format!("negative weight {}", self.alpha)));
        }
        if self.omega < 0.0 {
            return Err(KernelError::InvalidPrimitive(format!("negative modulation {}", self.omega)));
        }
        let smax = self.scale.iter().cloned().fold(f64::MIN, f64::max);
        let smin = self.scale.iter().cloned().fold(f64::MAX, f64::min);
        if smin <= 0.0 || smax / smin > MAX_CONDITION {
            return Err(KernelError::SingularCovariance { scale: self.scale });
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<Kernel, KernelError> {
        Kernel::new(*self)
    }
}

/// A primitive with its derived matrices precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    prim: Primitive,
    mu: Vec3,
    /// `W = S⁻¹ Rᵀ`, maps world offsets to the whitened frame.
    whitening: Mat3,
    /// `W⁻¹ = R S`.
    unwhitening: Mat3,
    /// World modulation vector `ω⃗ = R S⁻¹ (ω,ω,ω)`.
    modulation: Vec3,
    /// Whitened modulation, `(ω, ω, ω)`.
    kw: Vec3,
    det_sqrt: f64,
    norm: f64,
}

/// A ray expressed in the whitened frame of one kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WhitenedRay {
    pub pw: Vec3,
    pub vw: Vec3,
    pub kw: Vec3,
    /// `‖W v‖`; a world length `dt` spans `jac * dt` whitened units.
    pub jac: f64,
    pub b: f64,
    pub c: f64,
    pub omega: f64,
    pub d: f64,
    /// `pW − b·vW`, the offset from the kernel center at closest approach.
    pub perp: Vec3,
}

impl WhitenedRay {
    /// Squared perpendicular distance from the kernel center, `c − b²`.
    ///
    /// Taken from [`WhitenedRay::perp`], which does not cancel when the
    /// origin is far away.
    #[inline]
    pub fn perp2(&self) -> f64 {
        self.perp.norm_squared()
    }

    /// Modulation phase at closest approach, `d − Ω b`.
    #[inline]
    pub fn phase(&self) -> f64 {
        self.kw.dot(&self.perp)
    }

    /// Whitened coordinate along the ray, centered at the closest approach.
    #[inline]
    pub fn u(&self, t: f64) -> f64 {
        self.jac * t + self.b
    }
}

impl Kernel {
    pub fn new(prim: Primitive) -> Result<Self, KernelError> {
        prim.validate()?;
        let r = prim.rotation().to_rotation_matrix().into_inner();
        let s = prim.scales();
        let inv_s = s.map(|v| 1.0 / v);
        let whitening = Mat3::from_diagonal(&inv_s) * r.transpose();
        let unwhitening = r * Mat3::from_diagonal(&s);
        let kw = Vec3::repeat(prim.omega);
        let modulation = r * inv_s.component_mul(&kw);
        let det_sqrt = s.x * s.y * s.z;
        let norm = 1.0 / ((2.0 * PI).powf(1.5) * det_sqrt);
        Ok(Kernel {
            prim,
            mu: prim.mean(),
            whitening,
            unwhitening,
            modulation,
            kw,
            det_sqrt,
            norm,
        })
    }

    pub fn primitive(&self) -> &Primitive {
        &self.prim
    }

    pub fn mean(&self) -> Vec3 {
        self.mu
    }

    pub fn alpha(&self) -> f64 {
        self.prim.alpha
    }

    pub fn whitening(&self) -> &Mat3 {
        &self.whitening
    }

    pub fn modulation(&self) -> Vec3 {
        self.modulation
    }

    pub fn peak_frequency(&self) -> f64 {
        self.modulation.norm()
    }

    /// `√|Σ|`, the product of the principal scales.
    pub fn det_sqrt(&self) -> f64 {
        self.det_sqrt
    }

    pub fn covariance(&self) -> Mat3 {
        self.unwhitening * self.unwhitening.transpose()
    }

    /// Density of the unit-weight kernel at `x`. Can be negative for Gabors.
    #[inline]
    pub fn eval(&self, x: &Vec3) -> f64 {
        let y = self.whitening * (x - self.mu);
        self.norm * (-0.5 * y.norm_squared()).exp() * self.kw.dot(&y).cos()
    }

    /// World-space box enclosing the ellipsoid of whitened radius `extent`.
    pub fn bounds(&self, extent: f64) -> Aabb {
        let half = Vec3::from_fn(|i, _| extent * self.unwhitening.row(i).norm());
        Aabb::new(self.mu - half, self.mu + half)
    }

    pub fn whiten(&self, ray: &Ray) -> Result<WhitenedRay, KernelError> {
        self.whiten_parts(&ray.origin, &ray.dir)
    }

    #[inline]
    pub fn whiten_parts(&self, origin: &Vec3, dir: &Vec3) -> Result<WhitenedRay, KernelError> {
        let w = self.whitening * dir;
        let jac = w.norm();
        if !(jac > 0.0) || !jac.is_finite() {
            return Err(KernelError::InvalidRay);
        }
        let vw = w / jac;
        let pw = self.whitening * (origin - self.mu);
        let kw = self.kw;
        let b = pw.dot(&vw);
        let perp = pw - vw * b;
        Ok(WhitenedRay {
            pw,
            vw,
            kw,
            jac,
            b,
            c: pw.norm_squared(),
            omega: kw.dot(&vw),
            d: kw.dot(&pw),
            perp,
        })
    }

    /// Line integral of the unit-weight kernel over the whole line.
    pub fn integral_full(&self, ray: &Ray) -> Result<f64, KernelError> {
        Ok(self.integral_full_whitened(&self.whiten(ray)?))
    }

    #[inline]
    pub fn integral_full_whitened(&self, wr: &WhitenedRay) -> f64 {
        let k = 1.0 / (TAU * self.det_sqrt * wr.jac);
        k * (-0.5 * (wr.perp2() + wr.omega * wr.omega)).exp() * wr.phase().cos()
    }

    /// Exact line integral of the unit-weight kernel over world `t ∈ [t0, t1]`.
    pub fn integral_segment(&self, ray: &Ray, t0: f64, t1: f64) -> Result<f64, KernelError> {
        if t0 > t1 {
            return Err(KernelError::InvalidBounds { t0, t1 });
        }
        Ok(self.integral_segment_whitened(&self.whiten(ray)?, t0, t1))
    }

    #[inline]
    pub fn integral_segment_whitened(&self, wr: &WhitenedRay, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let diff = erf::scaled_erf_diff(wr.u(t0), wr.u(t1), wr.omega);
        self.finish_segment(wr, diff)
    }

    /// Applies the prefactor and phase to `exp(-Ω²/2)·Δerf`.
    #[inline]
    fn finish_segment(&self, wr: &WhitenedRay, scaled_diff: Complex64) -> f64 {
        let pre = self.norm / wr.jac * (0.5 * PI).sqrt() * (-0.5 * wr.perp2()).exp();
        let phase = Complex64::from_polar(1.0, wr.phase());
        pre * (phase * scaled_diff).re
    }

    /// Segment integral through the truncated series, with a midpoint
    /// shortcut for tiny segments.
    ///
    /// Bounds whose series has not settled after `series_terms` terms are
    /// evaluated through the exact route instead.
    pub fn integral_segment_fast(
        &self,
        ray: &Ray,
        t0: f64,
        t1: f64,
        series_terms: usize,
        midpoint_threshold: f64,
    ) -> Result<f64, KernelError> {
        if t0 > t1 {
            return Err(KernelError::InvalidBounds { t0, t1 });
        }
        let wr = self.whiten(ray)?;
        Ok(self.integral_segment_fast_whitened(&wr, ray, t0, t1, series_terms, midpoint_threshold))
    }

    pub fn integral_segment_fast_whitened(
        &self,
        wr: &WhitenedRay,
        ray: &Ray,
        t0: f64,
        t1: f64,
        series_terms: usize,
        midpoint_threshold: f64,
    ) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        if (t1 - t0) * wr.jac < midpoint_threshold {
            let mid = ray.at(0.5 * (t0 + t1));
            return self.eval(&mid) * (t1 - t0);
        }
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let z0 = Complex64::new(wr.u(t0), -wr.omega) * scale;
        let z1 = Complex64::new(wr.u(t1), -wr.omega) * scale;
        let (e0, r0) = erf_series(z0, series_terms);
        let (e1, r1) = erf_series(z1, series_terms);
        let ok = |e: Complex64, r: f64| r <= erf::SERIES_CONVERGED * e.norm().max(1.0);
        let g = (-0.5 * wr.omega * wr.omega).exp();
        let diff = if ok(e0, r0) && ok(e1, r1) {
            (e1 - e0) * g
        } else {
            erf::scaled_erf_diff(wr.u(t0), wr.u(t1), wr.omega)
        };
        self.finish_segment(wr, diff)
    }

    /// Analytic Fourier transform at angular frequency `k` (unit weight).
    pub fn fourier_transform(&self, k: &Vec3) -> ComplexScalar {
        let st = self.unwhitening.transpose();
        let minus = st * (k - self.modulation);
        let plus = st * (k + self.modulation);
        let mag = 0.5 * ((-0.5 * minus.norm_squared()).exp() + (-0.5 * plus.norm_squared()).exp());
        Complex64::from_polar(mag, -k.dot(&self.mu))
    }

    /// Whitened support radius beyond which the weighted line integral of a
    /// worst-case ray drops below `eps`. Clamped to `[0, 3]`.
    pub fn adaptive_extent(&self, eps: f64) -> f64 {
        let alpha = self.prim.alpha;
        if alpha <= 0.0 || !(eps > 0.0) {
            return if alpha <= 0.0 { 0.0 } else { SIGMA_EXTENT };
        }
        let radicand = -2.0 * (TAU * eps * self.det_sqrt / alpha).ln() - self.kw.norm_squared();
        if radicand <= 0.0 {
            0.0
        } else {
            radicand.sqrt().min(SIGMA_EXTENT)
        }
    }
}

impl Primitive {
    pub fn eval(&self, x: &Vec3) -> Result<f64, KernelError> {
        Ok(self.kernel()?.eval(x))
    }
}
