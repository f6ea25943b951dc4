//! Band powers of a field's analytic spectrum by importance sampling.
//!
//! Each kernel's power `|Fᵢ(k)|²` is two Gaussian lobes at `±ω⃗ᵢ` with
//! covariance `(2Σᵢ)⁻¹`. Proposals are drawn from that mixture, weighted
//! by `αᵢ² / √|Σᵢ|`, which dominates `|Σ αᵢ Fᵢ|²` up to a factor `N`.

use gabor_fields::{Field, Vec3};
use num_complex::Complex64;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug)]
pub struct BandPower {
    /// `∫ |F|²` over `‖k‖ > edge`.
    pub above: f64,
    /// `∫ |F|²` over `‖k‖ ≤ edge`.
    pub below: f64,
}

pub fn band_power(field: &Field, edge: f64, samples: usize, rng: &mut impl Rng) -> BandPower {
    let kernels = field.kernels();
    let mass: Vec<f64> = kernels.iter().map(|k| k.alpha() * k.alpha() / k.det_sqrt()).collect();
    let total: f64 = mass.iter().sum();
    let pick = WeightedIndex::new(&mass).unwrap();
    // (RS)ᵀ per kernel
    let st: Vec<_> = kernels.iter().map(|k| k.whitening().try_inverse().unwrap().transpose()).collect();
    // lobe density of N(c, (2Σ)⁻¹) at k, up to the shared (2π)^{-3/2}
    let lobe = |i: usize, k: &Vec3, c: &Vec3| {
        let y = st[i] * (k - c);
        8f64.sqrt() * kernels[i].det_sqrt() * (-y.norm_squared()).exp()
    };
    let proposal = |k: &Vec3| -> f64 {
        let mut q = 0.0;
        for (i, kn) in kernels.iter().enumerate() {
            let w = kn.modulation();
            let both = if w.norm_squared() == 0.0 { lobe(i, k, &w) } else { 0.5 * (lobe(i, k, &w) + lobe(i, k, &-w)) };
            q += mass[i] / total * both;
        }
        q * (2.0 * std::f64::consts::PI).powf(-1.5)
    };
    let (mut above, mut below) = (0.0, 0.0);
    for _ in 0..samples {
        let i = pick.sample(rng);
        let kn = &kernels[i];
        let z = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
        let sign: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        // Σ = (RS)(RS)ᵀ, so (2Σ)⁻¹ = Wᵀ W / 2 with W = S⁻¹Rᵀ
        let k: Vec3 = kn.modulation() * sign + kn.whitening().transpose() * z / 2f64.sqrt();
        let f: Complex64 = kernels.iter().map(|g| g.fourier_transform(&k) * g.alpha()).sum();
        let v = f.norm_sqr() / proposal(&k);
        if k.norm() > edge {
            above += v;
        } else {
            below += v;
        }
    }
    BandPower { above: above / samples as f64, below: below / samples as f64 }
}
