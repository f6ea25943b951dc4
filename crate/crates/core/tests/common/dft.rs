//! Riemann-sum Fourier transform of a rasterized density.

use gabor_fields::{Aabb, Vec3};
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Continuous transform `∫ f(x) e^{−ik·x} dx` on the DFT lattice of `domain`,
/// from samples of `f` at `min + i·h`. Storage is `x` fastest.
pub struct Lattice {
    pub n: usize,
    pub domain: Aabb,
    pub values: Vec<Complex64>,
}

impl Lattice {
    pub fn signed(&self, i: usize) -> i64 {
        if i < self.n.div_ceil(2) {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    pub fn frequency(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let e = self.domain.extent();
        let idx = [i, j, k];
        Vec3::from_fn(|a, _| std::f64::consts::TAU * self.signed(idx[a]) as f64 / e[a])
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.values[i + self.n * (j + self.n * k)]
    }
}

pub fn transform(f: impl Fn(&Vec3) -> f64, n: usize, domain: &Aabb) -> Lattice {
    let h = domain.extent() / n as f64;
    let mut data: Vec<Complex64> = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let x = domain.min + Vec3::new(i as f64 * h.x, j as f64 * h.y, k as f64 * h.z);
                data.push(Complex64::new(f(&x), 0.0));
            }
        }
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut line = vec![Complex64::default(); n];
    for axis in 0..3 {
        let stride = n.pow(axis as u32);
        for outer in 0..n * n {
            // base index of the line with `axis` varying
            let lo = outer % stride;
            let hi = outer / stride;
            let base = lo + hi * stride * n;
            for t in 0..n {
                line[t] = data[base + t * stride];
            }
            fft.process(&mut line);
            for t in 0..n {
                data[base + t * stride] = line[t];
            }
        }
    }
    let mut lat = Lattice { n, domain: *domain, values: data };
    let dv = h.x * h.y * h.z;
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let w = lat.frequency(i, j, k);
                let shift = Complex64::from_polar(dv, -w.dot(&domain.min));
                lat.values[i + n * (j + n * k)] *= shift;
            }
        }
    }
    lat
}
