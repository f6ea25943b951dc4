//! Images and tables shared by the command line and the service.

use gabor_fields::render::{render_tomography, Camera, Image, RenderConfig, RenderError, RenderOutput};
use gabor_fields::{Aabb, Field};

/// Deterministic tomography preview, optionally pruned to `max_freq`.
pub fn preview(field: &Field, camera: Camera, width: usize, height: usize, max_freq: Option<f64>) -> Result<RenderOutput, RenderError> {
    let cfg = RenderConfig { width, height, spp: 1, camera, ..RenderConfig::default() };
    match max_freq {
        Some(f) => render_tomography(&field.pruned(f), &cfg),
        None => render_tomography(field, &cfg),
    }
}

/// Cube domain around the field with a margin, for spectra.
pub fn spectrum_domain(field: &Field) -> Aabb {
    let b = field.bounds();
    if b.is_empty() {
        return Aabb::cube(1.0);
    }
    let c = b.center();
    let half = 0.5 * b.extent().max() * 1.25;
    Aabb::new(c.add_scalar(-half), c.add_scalar(half))
}

/// Log-power slice through DC, centered, normalized to `[0, 1]`.
pub fn spectrum_slice(field: &Field, n: usize, axis: usize) -> Image {
    let plane = field.spectrum_plane(n, &spectrum_domain(field), axis);
    let logp: Vec<f64> = plane.iter().map(|p| (p + 1e-12).log10()).collect();
    let hi = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut gray = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            // shift DC to the center
            let (si, sj) = ((i + n / 2) % n, (j + n / 2) % n);
            let v = logp[si + n * sj];
            gray[i + n * (n - 1 - j)] = ((v - hi + 12.0) / 12.0).clamp(0.0, 1.0);
        }
    }
    Image::from_gray(n, n, &gray)
}

/// Radially binned power spectrum as CSV (`k,power,count`).
pub fn spectrum_csv(field: &Field, n: usize) -> String {
    let spec = field.spectrum(n, &spectrum_domain(field));
    let kmax = (0..3).map(|a| spec.frequency(n / 2, n / 2, n / 2)[a].abs()).fold(0.0, f64::max);
    let bins = n / 2;
    let mut power = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let r = spec.frequency(i, j, k).norm();
                let b = ((r / kmax) * bins as f64) as usize;
                if b < bins {
                    power[b] += spec.at(i, j, k);
                    count[b] += 1;
                }
            }
        }
    }
    let mut s = String::from("k,power,count\n");
    for b in 0..bins {
        let k = (b as f64 + 0.5) * kmax / bins as f64;
        s.push_str(&format!("{k:.6},{:.8e},{}\n", power[b], count[b]));
    }
    s
}

/// Human-readable summary of a field.
pub fn info(field: &Field) -> String {
    let b = field.bounds();
    let mut s = format!(
        "primitives: {}\nlevels: {}\nbins: {}\ngabors: {}\nper-level: {:?}\ncutoffs: {:?}\n",
        field.len(),
        field.level_count(),
        field.bin_count(),
        field.gabor_count(),
        field.level_counts(),
        field.cutoffs(),
    );
    if !b.is_empty() {
        s.push_str(&format!(
            "bounds: [{:.4}, {:.4}, {:.4}] .. [{:.4}, {:.4}, {:.4}]\n",
            b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
        ));
    }
    s
}
