//! Complex error function evaluation for the segment integrals.
//!
//! Two routes are provided. The exact route goes through the scaled
//! complementary function `erfcx` so that the Gaussian prefactor of the line
//! integral can be folded in without overflow or cancellation. The fast route
//! is a truncated Maclaurin series, cheap near the origin.

use errorfunctions::ComplexErrorFunctions;
use num_complex::Complex64;

use std::f64::consts::{FRAC_2_SQRT_PI, FRAC_1_SQRT_2};

/// Largest series length accepted by the truncated expansion.
pub const MAX_SERIES_TERMS: usize = 16;

/// Relative size of a new term below which the series stops early.
pub const SERIES_EARLY_EXIT: f64 = 1e-9;

/// Residual term size (relative to the sum, floored at 1) above which a
/// truncated series is considered not converged.
pub(crate) const SERIES_CONVERGED: f64 = 1e-7;

/// Truncated Maclaurin series of `erf(z)`.
///
/// Returns the partial sum and the magnitude of the last term that was added.
pub fn erf_series(z: Complex64, max_terms: usize) -> (Complex64, f64) {
    let max_terms = max_terms.clamp(1, MAX_SERIES_TERMS);
    let neg_z2 = -(z * z);
    // a_n = (-1)^n z^(2n+1) / n!
    let mut a = z;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut last = 0.0;
    for n in 0..max_terms {
        let term = a / (2 * n + 1) as f64;
        sum += term;
        last = term.norm();
        if last < SERIES_EARLY_EXIT * sum.norm() {
            break;
        }
        a = a * neg_z2 / (n + 1) as f64;
    }
    (sum * FRAC_2_SQRT_PI, last * FRAC_2_SQRT_PI)
}

/// Real part of the truncated `erf` series with at most `max_terms` terms.
///
/// ```
/// use gabor_fields::kernel::erf_complex_re;
/// use num_complex::Complex64;
/// let v = erf_complex_re(Complex64::new(1.0, 0.0), 16);
/// assert!((v - 0.842_700_79).abs() < 1e-6);
/// ```
pub fn erf_complex_re(z: Complex64, max_terms: usize) -> f64 {
    erf_series(z, max_terms).0.re
}

/// `exp(-omega^2 / 2) * erf((u - i*omega) / sqrt(2))`, computed without
/// forming the (possibly huge) bare `erf` value.
///
/// The sign-dependent constant `±exp(-omega^2/2)` is returned separately so
/// that differences between bounds of equal sign cancel it exactly.
#[inline]
pub(crate) fn scaled_erf_parts(u: f64, omega: f64) -> (f64, Complex64) {
    let z = Complex64::new(u * FRAC_1_SQRT_2, -omega * FRAC_1_SQRT_2);
    // exp(-u^2/2 + i u omega) == exp(-omega^2/2) * exp(-z^2)
    let h = Complex64::from_polar((-0.5 * u * u).exp(), u * omega);
    if u >= 0.0 {
        (1.0, -(h * z.erfcx()))
    } else {
        (-1.0, h * (-z).erfcx())
    }
}

/// `exp(-omega^2/2) * [erf(z1) - erf(z0)]` with `z = (u - i*omega)/sqrt(2)`.
pub(crate) fn scaled_erf_diff(u0: f64, u1: f64, omega: f64) -> Complex64 {
    let (s0, r0) = scaled_erf_parts(u0, omega);
    let (s1, r1) = scaled_erf_parts(u1, omega);
    let constant = if s0 == s1 { 0.0 } else { (s1 - s0) * (-0.5 * omega * omega).exp() };
    Complex64::new(constant, 0.0) + (r1 - r0)
}

/// Exact complex `erf`, exposed for oracles and diagnostics.
pub fn erf_exact(z: Complex64) -> Complex64 {
    z.erf()
}
