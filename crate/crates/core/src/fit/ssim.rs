//! Structural similarity with an analytic gradient.
//!
//! 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`, `K2 = 0.03`, dynamic range 1,
//! zero padding at the image border.

const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window() -> [f64; 2 * RADIUS + 1] {
    let mut w = [0.0; 2 * RADIUS + 1];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-0.5 * d * d / (SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter with zero padding.
pub fn filter(img: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = window();
    let r = RADIUS as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as i64 + t as i64 - r;
                if xx >= 0 && xx < w as i64 {
                    acc += kv * img[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yy = y as i64 + t as i64 - r;
                if yy >= 0 && yy < h as i64 {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM of `x` against `y`, and its gradient with respect to `x` when asked.
pub fn ssim(x: &[f64], y: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    assert_eq!(x.len(), w * h);
    assert_eq!(y.len(), w * h);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter(x, w, h);
    let my = filter(y, w, h);
    let sxx = filter(&sq(x, x), w, h);
    let syy = filter(&sq(y, y), w, h);
    let sxy = filter(&sq(x, y), w, h);
    let n = (w * h) as f64;
    let mut total = 0.0;
    let (mut a, mut b, mut c) = (vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]);
    for p in 0..w * h {
        let vx = sxx[p] - mx[p] * mx[p];
        let vy = syy[p] - my[p] * my[p];
        let cxy = sxy[p] - mx[p] * my[p];
        let num1 = 2.0 * mx[p] * my[p] + C1;
        let num2 = 2.0 * cxy + C2;
        let den1 = mx[p] * mx[p] + my[p] * my[p] + C1;
        let den2 = vx + vy + C2;
        let s = num1 * num2 / (den1 * den2);
        total += s;
        if want_grad {
            let ds_dmx = 2.0 * my[p] * num2 / (den1 * den2) - s * 2.0 * mx[p] / den1;
            let ds_dvx = -s / den2;
            let ds_dcxy = 2.0 * num1 / (den1 * den2);
            b[p] = ds_dvx;
            c[p] = ds_dcxy;
            a[p] = ds_dmx - 2.0 * mx[p] * ds_dvx - my[p] * ds_dcxy;
        }
    }
    if !want_grad {
        return (total / n, None);
    }
    // the window is symmetric, so the adjoint of the filter is the filter
    let fa = filter(&a, w, h);
    let fb = filter(&b, w, h);
    let fc = filter(&c, w, h);
    let grad = (0..w * h).map(|q| (fa[q] + 2.0 * x[q] * fb[q] + y[q] * fc[q]) / n).collect();
    (total / n, Some(grad))
}
