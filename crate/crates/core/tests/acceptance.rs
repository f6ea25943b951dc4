//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Pass a substring to run only
//! the matching criteria, e.g. `cargo test --test acceptance -- gradient`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use common::stats::{chi_square_p, Moments};
use common::{dft, fit as fitfix, fixtures, quad, raymarch, spectral};
use gabor_fields::field::gff;
use gabor_fields::fit::forward::LossWeights;
use gabor_fields::fit::{self, fixture_blob, FitConfig, FitResult, OptimizerState};
use gabor_fields::procedural::bundled_cloud;
use gabor_fields::render::config::DEFAULT_CULL_THRESHOLD;
use gabor_fields::render::{
    bench, collect_segments, psnr, render_motion_blur, render_tomography, sample_distance, transmittance,
    DistanceMethod, Filter, MotionConfig, RayQuery, RenderConfig, Renderer, TraversalStats,
};
use gabor_fields::sampling::{Decision, LaplacianKind, LaplacianStrategy, OrientationKind, StrategyConfig};
use gabor_fields::kernel::SIGMA_EXTENT;
use gabor_fields::{Aabb, Field, Mat3, Primitive, Ray, Vec3};
use rand::Rng;

mod tol {
    pub const QUADRATURE_REL: f64 = 1e-5;
    pub const QUADRATURE_ABS: f64 = 1e-12;
    pub const DFT_REL: f64 = 1e-3;
    pub const GAUSSIAN_REDUCTION: f64 = 1e-12;
    pub const UNBIASED_SE: f64 = 3.0;
    pub const BIAS_PREDICTION: f64 = 0.05;
    pub const CHI_SQUARE_P: f64 = 0.01;
    pub const GRADIENT_REL: f64 = 1e-3;
    pub const FIT_GAIN_DB: f64 = 10.0;
    pub const LOD_LEAK: f64 = 0.01;
    pub const RESAMPLE_ABS: f64 = 1e-5;
    pub const MOTION_PSNR_DB: f64 = 35.0;
    /// Allowed PSNR drop between consecutive spp rungs, in standard errors
    /// of the seed-averaged difference.
    pub const BENCH_NOISE_SE: f64 = 3.0;
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Relative error with an absolute floor on the denominator.
fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

fn quadrature_equivalence() -> Outcome {
    let mut rng = fixtures::rng(11);
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    for _ in 0..1000 {
        let p = fixtures::primitive(&mut rng, 0.5, (0.05, 0.5), 2.5);
        let k = p.kernel().unwrap();
        let ray = fixtures::ray_near(&mut rng, &k.mean(), 2.0 * p.scale[0], 2.0);
        let a = rng.random_range(0.0..4.0);
        let b = rng.random_range(0.0..4.0);
        let (t0, t1) = (f64::min(a, b), f64::max(a, b));
        let analytic = k.integral_segment(&ray, t0, t1).unwrap();
        let oracle = quad::integrate(|t| k.eval(&ray.at(t)), t0, t1, 1e-13, 1e-16);
        let err = (analytic - oracle).abs();
        let bound = tol::QUADRATURE_REL * oracle.abs() + tol::QUADRATURE_ABS;
        if err > bound {
            fails += 1;
        }
        worst = worst.max(err / bound);
    }
    outcome(fails == 0, format!("1000 cases, {fails} outside bound, worst err/bound = {worst:.2e}"))
}

fn fourier_correspondence() -> Outcome {
    let mut rng = fixtures::rng(12);
    let domain = Aabb::cube(1.0);
    let n = 64;
    let half_nyquist = 0.5 * std::f64::consts::PI * n as f64 / 2.0;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = fixtures::primitive(&mut rng, 0.3, (0.06, 0.15), 1.5);
        let k = p.kernel().unwrap();
        let lat = dft::transform(|x| k.eval(x), n, &domain);
        let mut peak: f64 = 0.0;
        let mut err: f64 = 0.0;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let w = lat.frequency(x, y, z);
                    if w.norm() >= half_nyquist {
                        continue;
                    }
                    let exact = k.fourier_transform(&w);
                    peak = peak.max(exact.norm());
                    err = err.max((lat.at(x, y, z) - exact).norm());
                }
            }
        }
        worst = worst.max(err / peak);
    }
    outcome(worst < tol::DFT_REL, format!("20 primitives at 64³, worst |ΔF|/max|F| = {worst:.2e}"))
}

fn gaussian_reduction() -> Outcome {
    let unit = Primitive::gaussian(Vec3::zeros(), Vec3::repeat(1.0), 1.0).kernel().unwrap();
    let ray = Ray::new(Vec3::new(0.0, 0.0, -10.0), Vec3::z());
    let want = 1.0 / std::f64::consts::TAU;
    let full = unit.integral_full(&ray).unwrap();
    let seg = unit.integral_segment(&ray, 0.0, 20.0).unwrap();
    let mut worst = rel(full, want, 0.0).max(rel(seg, want, 0.0));
    // anisotropic cases against the dense closed form
    let mut rng = fixtures::rng(13);
    for _ in 0..200 {
        let p = Primitive { omega: 0.0, ..fixtures::primitive(&mut rng, 0.5, (0.05, 0.6), 0.0) };
        let k = p.kernel().unwrap();
        let ray = fixtures::ray_near(&mut rng, &k.mean(), 2.0 * p.scale.iter().cloned().fold(1.0, f64::min), 5.0);
        let sigma: Mat3 = k.covariance();
        let inv = sigma.try_inverse().unwrap();
        let a = ray.dir.dot(&(inv * ray.dir));
        // the full-line integral does not depend on the origin, so measure
        // from the Mahalanobis closest approach to avoid cancellation
        let o0 = ray.origin - k.mean();
        let o = o0 - ray.dir * (ray.dir.dot(&(inv * o0)) / a);
        let (b, c) = (ray.dir.dot(&(inv * o)), o.dot(&(inv * o)));
        let closed = (-0.5 * (c - b * b / a)).exp() / (std::f64::consts::TAU * sigma.determinant().sqrt() * a.sqrt());
        let got = k.integral_full(&ray).unwrap();
        worst = worst.max(rel(got, closed, 1e-300));
    }
    outcome(
        worst < tol::GAUSSIAN_REDUCTION,
        format!("unit σ through center = {full:.15} (want 1/2π); worst rel over 200 anisotropic = {worst:.2e}"),
    )
}

fn strategy_rows() -> Vec<StrategyConfig> {
    let mut rows: Vec<StrategyConfig> = LaplacianKind::ALL.iter().map(|&k| StrategyConfig::levels(k, 0.5)).collect();
    rows[0].beta = 0.0;
    for k in OrientationKind::ALL.into_iter().skip(1) {
        // threshold culling only claims to be exact at δ = 1
        let delta = if k == OrientationKind::ThresholdCull { 1.0 } else { 0.5 };
        rows.push(StrategyConfig::bins(k, delta));
    }
    rows
}

fn strategy_unbiasedness() -> Outcome {
    let field = fixtures::mixed_field(100, 14);
    let base = Renderer::simple(&field);
    let mut rng = fixtures::rng(15);
    let rays = fixtures::probe_rays(&mut rng, 2, 0.1);
    let draws = 1_000_000;
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    let mut pass = true;
    for s in strategy_rows() {
        let sampler = s.compile(&field).unwrap();
        let r = Renderer { sampler, ..Renderer::simple(&field) };
        for (ri, ray) in rays.iter().enumerate() {
            let det = base.optical_depth(ray);
            let mut m = Moments::default();
            let mut q = RayQuery::default();
            let mut st = TraversalStats::default();
            let mut g = fixtures::rng(100 + ri as u64);
            for _ in 0..draws {
                m.push(r.tau_estimate(ray, &Filter::default(), &mut g, &mut q, &mut st));
            }
            let se = m.std_error();
            let z = if se > 0.0 { (m.mean() - det).abs() / se } else if rel(m.mean(), det, 1e-12) < 1e-12 { 0.0 } else { f64::INFINITY };
            worst = worst.max(z);
            if z > tol::UNBIASED_SE {
                pass = false;
                lines.push(format!("{} ray {ri}: z = {z:.2}", s.label()));
            }
        }
    }
    let detail = if lines.is_empty() {
        format!("11 strategies × 2 rays × 10⁶ draws, worst |mean − τ|/SE = {worst:.2}")
    } else {
        lines.join("; ")
    };
    outcome(pass, detail)
}

fn bias_prediction() -> Outcome {
    let tau = 1.3;
    let uniform = LaplacianStrategy::new(LaplacianKind::Uniform, 0.0, 2).unwrap();
    let mut worst: f64 = 0.0;
    let mut closed_err: f64 = 0.0;
    for delta in [0.02, 0.05, 0.1, 0.2, 0.3] {
        // two pyramid levels whose reweighted single-level draws give τ ± δ
        let per_level = [0.5 * (tau - delta), 0.5 * (tau + delta)];
        let outcomes: Vec<f64> = [0.25, 0.75]
            .iter()
            .map(|&u| {
                let d = uniform.sample(u);
                (0..2).map(|l| d.weights[l] * per_level[l]).sum()
            })
            .collect();
        let mean: f64 = outcomes.iter().sum::<f64>() / 2.0;
        let var: f64 = outcomes.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 2.0;
        let bias = outcomes.iter().map(|&t| transmittance(t)).sum::<f64>() / 2.0 - transmittance(tau);
        let predicted = 0.5 * var * transmittance(tau);
        worst = worst.max(rel(bias, predicted, 0.0));
        let closed = (-tau).exp() * (delta.cosh() - 1.0);
        closed_err = closed_err.max(rel(bias, closed, 0.0));
    }
    outcome(
        worst < tol::BIAS_PREDICTION && closed_err < 1e-9,
        format!("δ ≤ 0.3: worst |bias − ½Var·T|/(½Var·T) = {worst:.4}, vs e^−τ(cosh δ − 1) {closed_err:.1e}"),
    )
}

fn distance_sampling() -> Outcome {
    let field = fixtures::positive_field(30, 16);
    let r = Renderer::simple(&field);
    let mut rng = fixtures::rng(17);
    let rays = fixtures::probe_rays(&mut rng, 10, 0.2);
    let samples = 100_000;
    let mut ps = Vec::new();
    for (ri, ray) in rays.iter().enumerate() {
        let mut q = RayQuery::default();
        let mut st = TraversalStats::default();
        let d = Decision::full(field.level_count(), field.bin_count());
        r.query(ray, &d, &Filter::default(), &mut q, &mut st);
        let segs = collect_segments(&q.hits);
        let (lo, hi) = (segs.first().unwrap().t0, segs.last().unwrap().t1);
        let dt = 1e-4;
        let steps = ((hi - lo) / dt).ceil() as usize;
        let cdf = raymarch::distance_cdf(&raymarch::cumulative_tau(|x| raymarch::truncated_density(&field, x, SIGMA_EXTENT), ray, lo, dt, steps));
        let bins = 40;
        let mut observed = vec![0u64; bins + 1];
        let mut g = fixtures::rng(200 + ri as u64);
        for _ in 0..samples {
            let xi: f64 = g.random();
            match sample_distance(&field, ray, &q.hits, &q.weights, &segs, xi, r.integrator, DistanceMethod::Bisection, 0.0) {
                Some(s) => {
                    let b = (((s.t - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, bins as f64 - 1.0) as usize;
                    observed[b] += 1;
                }
                None => observed[bins] += 1,
            }
        }
        let at = |frac: f64| cdf[((frac * steps as f64).round() as usize).min(steps)];
        let mut expected: Vec<f64> =
            (0..bins).map(|b| samples as f64 * (at((b + 1) as f64 / bins as f64) - at(b as f64 / bins as f64))).collect();
        expected.push(samples as f64 * (1.0 - cdf[steps]));
        let (p, _) = chi_square_p(&observed, &expected);
        ps.push(p);
    }
    let min = ps.iter().cloned().fold(1.0, f64::min);
    outcome(min > tol::CHI_SQUARE_P, format!("10 rays × 10⁵ samples, min p = {min:.3}"))
}

fn gradient_check() -> Outcome {
    let prims = fitfix::five_prims();
    let views = fitfix::small_views(24);
    let refs = fitfix::references(&prims, &views);
    let w = LossWeights::new(64, 2.0);
    let errs = fitfix::gradient_errors(&prims, &views, &refs, &w, 1e-4);
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errs.iter().map(|(g, e)| format!("{} {e:.1e}", g.name())).collect::<Vec<_>>().join(", ");
    outcome(errs.len() == 5 && worst < tol::GRADIENT_REL, detail)
}

/// The desk-scale fit, shared with the clamping check.
fn desk_result() -> &'static FitResult {
    static RESULT: OnceLock<FitResult> = OnceLock::new();
    RESULT.get_or_init(|| fit::fit(&fixture_blob(64), &FitConfig::desk(), &mut |_| {}).unwrap())
}

fn desk_fit() -> Outcome {
    let a = desk_result();
    let b = fit::fit(&fixture_blob(64), &FitConfig::desk(), &mut |_| {}).unwrap();
    let same = gff::serialize(&a.field) == gff::serialize(&b.field);
    let gain = a.final_psnr - a.init_psnr;
    outcome(
        gain >= tol::FIT_GAIN_DB && same,
        format!(
            "{:.2} → {:.2} dB ({} primitives, {} Gabors), rerun identical: {same}",
            a.init_psnr,
            a.final_psnr,
            a.field.len(),
            a.field.gabor_count()
        ),
    )
}

fn lod_spectrum() -> Outcome {
    let field = bundled_cloud();
    let cutoffs = field.cutoffs().to_vec();
    let mut rng = fixtures::rng(19);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for &c in &cutoffs[..cutoffs.len() - 1] {
        let pruned = field.pruned(c);
        let edge = c + 3.0 / pruned.min_scale().unwrap();
        let p = spectral::band_power(&pruned, edge, 100_000, &mut rng);
        let full = spectral::band_power(&field, edge, 100_000, &mut rng);
        let ratio = p.above / full.below;
        worst = worst.max(ratio);
        parts.push(format!("f_max {c:.0} (edge {edge:.0}): {ratio:.1e}, unpruned {:.1e}", full.above / full.below));
    }
    outcome(worst < tol::LOD_LEAK, format!("power above edge / unpruned power below: {}", parts.join("; ")))
}

fn resampling_invariance() -> Outcome {
    let mut rng = fixtures::rng(18);
    let mut prims: Vec<Primitive> = (0..200).map(|_| fixtures::primitive(&mut rng, 0.5, (0.05, 0.2), 1.5)).collect();
    for (i, p) in prims.iter_mut().enumerate() {
        if i % 7 == 0 {
            p.alpha = 1e-8 * (i as f64 + 1.0);
        }
    }
    let before = prims.clone();
    let mut state = OptimizerState::new(prims.len());
    let report = fit::optim::resample_dead(&mut prims, &mut state, fit::optim::DEAD_THRESHOLD, &mut rng).unwrap();
    let bound: f64 = tol::RESAMPLE_ABS
        + before
            .iter()
            .filter(|p| p.alpha < fit::optim::DEAD_THRESHOLD)
            .map(|p| p.alpha.abs() * p.kernel().unwrap().eval(&p.mean()))
            .sum::<f64>();
    let fb = Field::with_defaults(&before).unwrap();
    let fa = Field::with_defaults(&prims).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = Vec3::new(rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7), rng.random_range(-0.7..0.7));
        worst = worst.max((raymarch::density(&fa, &x) - raymarch::density(&fb, &x)).abs());
    }
    outcome(
        worst < bound && report.moves.len() > 0,
        format!("{} moved, max |Δρ| = {worst:.2e} < bound {bound:.2e}", report.moves.len()),
    )
}

fn adaptive_clamping() -> Outcome {
    // a fitted asset: procedural kernels are too dense for ε to bite
    let field = &desk_result().field;
    let eps = 1e-4;
    let cfg = RenderConfig { width: 48, height: 48, ..Default::default() };
    let clamped_cfg = RenderConfig { clamp_eps: Some(eps), ..cfg.clone() };
    let full = Renderer::new(&field, &cfg).unwrap();
    let clamped = Renderer::new(&field, &clamped_cfg).unwrap();
    let frame = cfg.camera.frame(cfg.width, cfg.height).unwrap();
    let d = Decision::full(field.level_count(), field.bin_count());
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let ray = frame.pixel_center(x, y);
            let (mut qa, mut qb) = (RayQuery::default(), RayQuery::default());
            let mut st = TraversalStats::default();
            full.query(&ray, &d, &Filter::default(), &mut qa, &mut st);
            clamped.query(&ray, &d, &Filter::default(), &mut qb, &mut st);
            let dtau = (full.tau_of(&ray, &qa) - clamped.tau_of(&ray, &qb)).abs();
            let bound = qa.hits.len() as f64 * eps;
            if dtau > bound {
                violations += 1;
            }
            if bound > 0.0 {
                worst = worst.max(dtau / bound);
            }
        }
    }
    let a = render_tomography(&field, &cfg).unwrap().stats.prim_tests;
    let b = render_tomography(&field, &clamped_cfg).unwrap().stats.prim_tests;
    outcome(
        violations == 0 && b < a,
        format!("{violations} rays over hits×ε, worst |Δτ|/(hits×ε) = {worst:.2e}; prim tests {a} → {b}"),
    )
}

fn motion_blur_culling() -> Outcome {
    let field = bundled_cloud();
    let mut parts = Vec::new();
    let mut pass = true;
    for m in [0.1, 0.2, 0.4] {
        let cfg = RenderConfig { width: 32, height: 32, spp: 1024, ..Default::default() };
        let motion = MotionConfig { direction: [1.0, 0.0, 0.0], magnitude: m, cull_threshold: DEFAULT_CULL_THRESHOLD, cull: true };
        let culled = render_motion_blur(&field, &cfg, &motion).unwrap();
        let full = render_motion_blur(&field, &cfg, &MotionConfig { cull: false, ..motion }).unwrap();
        let db = psnr(&culled.image, &full.image, 1.0);
        let report = culled.motion.unwrap();
        pass &= db > tol::MOTION_PSNR_DB;
        parts.push(format!("m {m}: {db:.1} dB, {:.0}% fewer primitives", 100.0 * report.reduction));
    }
    outcome(pass, parts.join("; "))
}

fn bench_harness() -> Outcome {
    let field = bundled_cloud();
    let strategies: Vec<StrategyConfig> =
        ["uniform", "power_law:0.5", "uniform_cv", "power_law_cv:0.5", "deterministic+importance"]
            .iter()
            .map(|s| StrategyConfig::parse(s).unwrap())
            .collect();
    let ladder = bench::spp_ladder(128);
    let seeds = 4;
    // psnr[strategy][rung] over seeds
    let mut runs = vec![vec![Moments::default(); ladder.len()]; strategies.len()];
    let mut shape_ok = ladder == [1, 2, 4, 8, 16, 32, 64, 128];
    for seed in 0..seeds {
        let cfg = RenderConfig { width: 32, height: 32, seed, ..Default::default() };
        let rows = bench::bench(&field, &cfg, &strategies, 128).unwrap();
        shape_ok &= rows.len() == strategies.len() * ladder.len();
        shape_ok &= bench::bench_csv(&rows).starts_with("strategy,spp,psnr_db,seconds,prim_tests");
        for (i, r) in rows.iter().enumerate() {
            runs[i / ladder.len()][i % ladder.len()].push(r.psnr);
        }
    }
    let mut drops = Vec::new();
    let mut gains = Vec::new();
    for (s, rungs) in strategies.iter().zip(&runs) {
        for (i, w) in rungs.windows(2).enumerate() {
            let noise = tol::BENCH_NOISE_SE * (w[0].std_error().powi(2) + w[1].std_error().powi(2)).sqrt();
            if w[1].mean() < w[0].mean() - noise {
                drops.push(format!("{} {}→{} spp", s.label(), ladder[i], ladder[i + 1]));
            }
        }
        let gain = rungs[ladder.len() - 1].mean() - rungs[0].mean();
        if gain <= 0.0 {
            drops.push(format!("{} does not improve", s.label()));
        }
        gains.push(format!("{} +{gain:.1}", s.label()));
    }
    outcome(
        drops.is_empty() && shape_ok,
        if drops.is_empty() {
            format!("{} strategies × spp 1..128 × {seeds} seeds; dB gained 1→128: {}", strategies.len(), gains.join(", "))
        } else {
            format!("drops: {}", drops.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("quadrature equivalence", quadrature_equivalence),
        ("fourier/dft correspondence", fourier_correspondence),
        ("gaussian reduction", gaussian_reduction),
        ("strategy unbiasedness", strategy_unbiasedness),
        ("bias prediction", bias_prediction),
        ("distance sampling", distance_sampling),
        ("gradient check", gradient_check),
        ("desk-scale fit", desk_fit),
        ("lod spectral property", lod_spectrum),
        ("resampling near-invariance", resampling_invariance),
        ("adaptive clamping", adaptive_clamping),
        ("motion-blur culling", motion_blur_culling),
        ("bench harness", bench_harness),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| outcome(false, format!("panicked: {:?}", e.downcast_ref::<String>().map(String::as_str).or(e.downcast_ref::<&str>().copied()))));
        let secs = start.elapsed().as_secs_f64();
        if !result.pass {
            failed += 1;
        }
        println!("{} {name}: {} [{secs:.1}s]", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
