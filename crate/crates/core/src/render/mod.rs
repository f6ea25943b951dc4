//! Ray traversal and the image integrators.
//!
//! A [`Renderer`] owns the acceleration structure for one field and exposes
//! per-ray queries. The `render_*` functions produce images for each mode.

pub mod bench;
pub mod bvh;
pub mod camera;
pub mod config;
pub mod image;
pub mod transport;

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, VisibilityMask};
use crate::geometry::{Ray, Vec3};
use crate::kernel::{Kernel, SIGMA_EXTENT};
use crate::sampling::{motion_cull, stream_rng, Decision, Foveation, MotionCull, Sampler, StrategyError, Stream};

pub use self::bvh::{sphere_interval, Bvh, Filter, Hit, TraversalStats};
pub use self::camera::{Camera, CameraFrame};
pub use self::config::{Environment, Ground, LightConfig, MediumParams, Mode, MotionConfig, RenderConfig, Sun};
pub use self::image::{psnr, Image};
pub use self::transport::{
    collect_segments, optical_depth, optical_depth_hits, sample_distance, transmittance, DistanceMethod,
    DistanceSample, Integrator, Segment, SegmentEvent,
};

/// How far a kernel's support reaches, in whitened units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExtentPolicy {
    Sigma3,
    Adaptive { eps: f64 },
}

impl ExtentPolicy {
    pub fn from_eps(eps: Option<f64>) -> Self {
        eps.map_or(ExtentPolicy::Sigma3, |eps| ExtentPolicy::Adaptive { eps })
    }

    pub fn extent(&self, k: &Kernel) -> f64 {
        match *self {
            ExtentPolicy::Sigma3 => SIGMA_EXTENT,
            ExtentPolicy::Adaptive { eps } => k.adaptive_extent(eps),
        }
    }
}

/// Interval of `ray` inside the extent-scaled ellipsoid of `k`.
pub fn primitive_events(k: &Kernel, ray: &Ray, extent: f64) -> Option<(f64, f64)> {
    let wr = k.whiten(ray).ok()?;
    sphere_interval(&wr, extent, ray.t_min, ray.t_max)
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("environment map: {0}")]
    Environment(#[from] image::ImageError),
}

/// Image plus instrumentation.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    pub stats: TraversalStats,
    pub seconds: f64,
    pub motion: Option<MotionReport>,
}

#[derive(Clone, Debug)]
pub struct MotionReport {
    pub culled_groups: Vec<(usize, usize)>,
    /// Fraction of primitives removed by the cull.
    pub reduction: f64,
    pub kept: usize,
}

impl RenderOutput {
    /// Single instrumentation row: `rays,node_visits,prim_tests,seconds`.
    pub fn stats_csv(&self) -> String {
        format!(
            "rays,node_visits,prim_tests,seconds\n{},{},{},{:.6}\n",
            self.stats.rays, self.stats.node_visits, self.stats.prim_tests, self.seconds
        )
    }
}

/// Per-ray reweighted optical depth with the hits that produced it.
#[derive(Clone, Debug, Default)]
pub struct RayQuery {
    pub hits: Vec<Hit>,
    pub weights: Vec<f64>,
}

/// A field prepared for rendering.
pub struct Renderer<'a> {
    pub field: &'a Field,
    pub bvh: Bvh,
    pub sampler: Sampler,
    pub nee: Sampler,
    pub integrator: Integrator,
    pub distance: DistanceMethod,
    pub density_scale: f64,
}

impl<'a> Renderer<'a> {
    pub fn new(field: &'a Field, cfg: &RenderConfig) -> Result<Self, RenderError> {
        let nee = if cfg.zero_nee {
            crate::sampling::StrategyConfig::deterministic().compile(field)?
        } else {
            cfg.nee_strategy.compile(field)?
        };
        Ok(Renderer {
            field,
            bvh: Bvh::build(field, ExtentPolicy::from_eps(cfg.clamp_eps)),
            sampler: cfg.strategy.compile(field)?,
            nee,
            integrator: cfg.integrator,
            distance: cfg.distance,
            density_scale: cfg.medium.density_scale,
        })
    }

    /// Deterministic renderer with 3σ extents.
    pub fn simple(field: &'a Field) -> Self {
        Renderer::new(field, &RenderConfig::default()).expect("default config is valid")
    }

    /// Intersects `ray` under `decision` and fills per-hit weights, in canonical order.
    pub fn query(&self, ray: &Ray, decision: &Decision, filter: &Filter, q: &mut RayQuery, stats: &mut TraversalStats) {
        q.hits.clear();
        q.weights.clear();
        let mut ray = *ray;
        ray.mask = VisibilityMask(ray.mask.0 & decision.mask().0);
        let bins = &decision.bins.weights[..self.field.bin_count()];
        let f = Filter { bin_weights: Some(bins), ..*filter };
        self.bvh.intersect(self.field, &ray, &f, &mut q.hits, stats);
        transport::canonicalize(&mut q.hits);
        for h in &q.hits {
            let p = h.prim as usize;
            let w = decision.weight(self.field.level_of(p), self.field.bin_of(p));
            q.weights.push(self.field.kernels()[p].alpha() * self.density_scale * w);
        }
    }

    pub fn tau_of(&self, ray: &Ray, q: &RayQuery) -> f64 {
        optical_depth_hits(self.field, ray, &q.hits, &q.weights, self.integrator)
    }

    /// Full-field optical depth, all levels, unit weights.
    pub fn optical_depth(&self, ray: &Ray) -> f64 {
        let d = Decision::full(self.field.level_count(), self.field.bin_count());
        let mut q = RayQuery::default();
        let mut st = TraversalStats::default();
        self.query(ray, &d, &Filter::default(), &mut q, &mut st);
        self.tau_of(ray, &q)
    }

    /// One strategy draw of the reweighted optical depth.
    pub fn tau_estimate<R: Rng>(&self, ray: &Ray, filter: &Filter, rng: &mut R, q: &mut RayQuery, stats: &mut TraversalStats) -> f64 {
        let d = self.sampler.draw(&ray.dir, rng);
        self.query(ray, &d, filter, q, stats);
        self.tau_of(ray, q)
    }
}

fn pixel_id(cfg: &RenderConfig, x: usize, y: usize) -> u64 {
    (y * cfg.width + x) as u64
}

/// Renders rows in parallel; `shade` returns a pixel and adds to its stats.
fn render_rows<F>(cfg: &RenderConfig, shade: F) -> (Image, TraversalStats)
where
    F: Fn(usize, usize, &mut TraversalStats) -> [f64; 3] + Sync,
{
    let rows: Vec<(Vec<[f64; 3]>, TraversalStats)> = (0..cfg.height)
        .into_par_iter()
        .map(|y| {
            let mut st = TraversalStats::default();
            let row = (0..cfg.width).map(|x| shade(x, y, &mut st)).collect();
            (row, st)
        })
        .collect();
    let mut img = Image::new(cfg.width, cfg.height);
    let mut stats = TraversalStats::default();
    for (y, (row, st)) in rows.into_iter().enumerate() {
        stats += st;
        for (x, v) in row.into_iter().enumerate() {
            img.set(x, y, v);
        }
    }
    (img, stats)
}

/// Level mask and frequency filter for a pixel's foveation threshold.
fn foveation_filter(field: &Field, fov: &Foveation, cfg: &RenderConfig, x: usize, y: usize) -> (VisibilityMask, f64) {
    let mut rng = stream_rng(cfg.seed, pixel_id(cfg, x, y), 0, 0, Stream::Foveation);
    let f = fov.threshold([x as f64 + 0.5, y as f64 + 0.5], rng.random());
    let mask = field.coarse_mask(f);
    (mask, if fov.fine { f } else { f64::INFINITY })
}

/// Transmittance image: per pixel, the mean reweighted optical depth over
/// `spp` draws, exponentiated once.
pub fn render_tomography(field: &Field, cfg: &RenderConfig) -> Result<RenderOutput, RenderError> {
    cfg.validate()?;
    let r = Renderer::new(field, cfg)?;
    Ok(tomography_with(&r, cfg, None, None))
}

/// Tomography with optional per-pixel foveation and primitive keep flags.
pub fn tomography_with(r: &Renderer, cfg: &RenderConfig, fov: Option<&Foveation>, keep: Option<&[bool]>) -> RenderOutput {
    let start = Instant::now();
    let frame = cfg.camera.frame(cfg.width, cfg.height).expect("validated camera");
    let deterministic = cfg.strategy.is_deterministic();
    let (image, stats) = render_rows(cfg, |x, y, st| {
        let mut ray = frame.pixel_center(x, y);
        let mut filter = Filter { keep, ..Filter::default() };
        if let Some(f) = fov {
            let (mask, max_freq) = foveation_filter(r.field, f, cfg, x, y);
            ray.mask = mask;
            filter.max_freq = max_freq;
        }
        let mut q = RayQuery::default();
        let tau = if deterministic {
            let d = Decision::full(r.field.level_count(), r.field.bin_count());
            r.query(&ray, &d, &filter, &mut q, st);
            r.tau_of(&ray, &q)
        } else {
            let mut acc = 0.0;
            for s in 0..cfg.spp {
                let mut rng = stream_rng(cfg.seed, pixel_id(cfg, x, y), s as u64, 0, Stream::Strategy);
                acc += r.tau_estimate(&ray, &filter, &mut rng, &mut q, st);
            }
            acc / cfg.spp as f64
        };
        let t = transmittance(tau);
        [t, t, t]
    });
    RenderOutput { image, stats, seconds: start.elapsed().as_secs_f64(), motion: None }
}

/// Henyey-Greenstein phase function value for the cosine between the
/// propagation directions.
pub fn hg_phase(cos: f64, g: f64) -> f64 {
    let d = 1.0 + g * g - 2.0 * g * cos;
    (1.0 - g * g) / (4.0 * PI * d * d.sqrt())
}

/// Samples an outgoing direction around `dir` from the HG distribution.
pub fn sample_hg(dir: &Vec3, g: f64, u1: f64, u2: f64) -> Vec3 {
    let cos = if g.abs() < 1e-3 {
        1.0 - 2.0 * u1
    } else {
        let s = (1.0 - g * g) / (1.0 - g + 2.0 * g * u1);
        (1.0 + g * g - s * s) / (2.0 * g)
    }
    .clamp(-1.0, 1.0);
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    let phi = TAU * u2;
    let (t, b) = orthonormal(dir);
    (t * (sin * phi.cos()) + b * (sin * phi.sin()) + dir * cos).normalize()
}

fn orthonormal(n: &Vec3) -> (Vec3, Vec3) {
    let a = if n.x.abs() > 0.9 { Vec3::y() } else { Vec3::x() };
    let t = n.cross(&a).normalize();
    (t, n.cross(&t))
}

/// Environment lookup, with an optionally loaded equirectangular map.
pub struct EnvLight {
    env: Environment,
    map: Option<Image>,
}

impl EnvLight {
    pub fn load(env: &Environment) -> Result<EnvLight, RenderError> {
        let map = match env {
            Environment::Map { path, .. } => Some(Image::read_pfm(std::fs::File::open(path).map_err(image::ImageError::Io)?)?),
            _ => None,
        };
        Ok(EnvLight { env: env.clone(), map })
    }

    pub fn eval(&self, d: &Vec3) -> [f64; 3] {
        match &self.env {
            Environment::Constant { color } => *color,
            Environment::Sky { zenith, horizon } => {
                let t = d.y.max(0.0);
                [0, 1, 2].map(|c| horizon[c] + (zenith[c] - horizon[c]) * t)
            }
            Environment::Map { scale, .. } => {
                let m = self.map.as_ref().expect("map loaded");
                let u = d.x.atan2(-d.z) / TAU + 0.5;
                let v = d.y.clamp(-1.0, 1.0).acos() / PI;
                let x = ((u * m.width as f64) as usize).min(m.width - 1);
                let y = ((v * m.height as f64) as usize).min(m.height - 1);
                m.pixel(x, y).map(|c| c * scale)
            }
        }
    }
}

struct PathContext<'r, 'a> {
    r: &'r Renderer<'a>,
    cfg: &'r RenderConfig,
    env: EnvLight,
}

impl PathContext<'_, '_> {
    fn nee(&self, x: &Vec3, filter: &Filter, pixel: u64, s: u64, depth: u64, q: &mut RayQuery, st: &mut TraversalStats) -> Option<(Vec3, [f64; 3], f64)> {
        let sun = self.cfg.light.sun?;
        let l = Vec3::from(sun.direction).try_normalize(1e-12)?;
        if let Some(g) = self.cfg.ground {
            if x.y < g.height || l.y <= 0.0 {
                return None;
            }
        }
        let ray = Ray::new(*x, l);
        let mut rng = stream_rng(self.cfg.seed, pixel, s, depth, Stream::NeeStrategy);
        let d = if self.cfg.zero_nee {
            let mut d = Decision::full(self.r.field.level_count(), self.r.field.bin_count());
            d.levels.mask = VisibilityMask::level(0);
            d
        } else {
            self.r.nee.draw(&l, &mut rng)
        };
        self.r.query(&ray, &d, filter, q, st);
        let tr = transmittance(self.r.tau_of(&ray, q));
        Some((l, sun.radiance, tr))
    }

    fn trace(&self, mut ray: Ray, filter: &Filter, pixel: u64, s: u64, st: &mut TraversalStats) -> [f64; 3] {
        let cfg = self.cfg;
        let field = self.r.field;
        let albedo = cfg.medium.albedo;
        let g = cfg.medium.hg_g;
        let mut q = RayQuery::default();
        let mut qn = RayQuery::default();
        let mut radiance = [0.0; 3];
        let mut beta = [1.0; 3];
        let base_mask = ray.mask;
        for depth in 0..cfg.max_depth as u64 {
            let ground_t = cfg.ground.and_then(|gr| {
                let t = (gr.height - ray.origin.y) / ray.dir.y;
                (t > 1e-9 && ray.dir.y != 0.0).then_some(t)
            });
            ray.t_max = ground_t.unwrap_or(f64::INFINITY);
            ray.mask = base_mask;
            let mut rng = stream_rng(cfg.seed, pixel, s, depth, Stream::Strategy);
            let d = self.r.sampler.draw(&ray.dir, &mut rng);
            self.r.query(&ray, &d, filter, &mut q, st);
            let segs = collect_segments(&q.hits);
            let mut drng = stream_rng(cfg.seed, pixel, s, depth, Stream::Distance);
            let xi: f64 = drng.random();
            let uf: f64 = drng.random();
            let sample = sample_distance(field, &ray, &q.hits, &q.weights, &segs, xi, self.r.integrator, self.r.distance, uf);
            let mut srng = stream_rng(cfg.seed, pixel, s, depth, Stream::Scatter);
            let (u1, u2): (f64, f64) = (srng.random(), srng.random());
            match (sample, ground_t) {
                (Some(ds), _) => {
                    let x = ray.at(ds.t);
                    for c in 0..3 {
                        beta[c] *= albedo[c];
                    }
                    if let Some((l, le, tr)) = self.nee(&x, filter, pixel, s, depth, &mut qn, st) {
                        let ph = hg_phase(ray.dir.dot(&l), g);
                        for c in 0..3 {
                            radiance[c] += beta[c] * ph * le[c] * tr;
                        }
                    }
                    ray = Ray::new(x, sample_hg(&ray.dir, g, u1, u2));
                    ray.mask = base_mask;
                }
                (None, Some(tg)) => {
                    let gr = cfg.ground.unwrap();
                    let x = ray.at(tg) + Vec3::y() * 1e-7;
                    for c in 0..3 {
                        beta[c] *= gr.albedo[c];
                    }
                    if let Some((l, le, tr)) = self.nee(&x, filter, pixel, s, depth, &mut qn, st) {
                        let cos = l.y.max(0.0);
                        for c in 0..3 {
                            radiance[c] += beta[c] / PI * cos * le[c] * tr;
                        }
                    }
                    // cosine-weighted bounce; BRDF·cos/pdf reduces to the albedo
                    let r = u1.sqrt();
                    let phi = TAU * u2;
                    let dir = Vec3::new(r * phi.cos(), (1.0 - u1).max(0.0).sqrt(), r * phi.sin());
                    ray = Ray::new(x, dir);
                }
                (None, None) => {
                    let e = self.env.eval(&ray.dir);
                    for c in 0..3 {
                        radiance[c] += beta[c] * e[c];
                    }
                    break;
                }
            }
            if depth >= 3 {
                let survive = beta.iter().cloned().fold(0.0, f64::max).min(1.0);
                let mut rr = stream_rng(cfg.seed, pixel, s, depth, Stream::Roulette);
                if survive <= 0.0 || rr.random::<f64>() >= survive {
                    break;
                }
                for b in beta.iter_mut() {
                    *b /= survive;
                }
            }
            if beta.iter().all(|&b| b == 0.0) {
                break;
            }
        }
        radiance
    }
}

/// Multiple-scattering volumetric path tracer.
pub fn path_trace(field: &Field, cfg: &RenderConfig) -> Result<RenderOutput, RenderError> {
    cfg.validate()?;
    let r = Renderer::new(field, cfg)?;
    path_trace_with(&r, cfg, None)
}

pub fn path_trace_with(r: &Renderer, cfg: &RenderConfig, fov: Option<&Foveation>) -> Result<RenderOutput, RenderError> {
    let start = Instant::now();
    let ctx = PathContext { r, cfg, env: EnvLight::load(&cfg.light.env)? };
    let frame = cfg.camera.frame(cfg.width, cfg.height).expect("validated camera");
    let (image, stats) = render_rows(cfg, |x, y, st| {
        let pixel = pixel_id(cfg, x, y);
        let mut filter = Filter::default();
        let mut mask = VisibilityMask::ALL;
        if let Some(f) = fov {
            let (m, fmax) = foveation_filter(r.field, f, cfg, x, y);
            mask = m;
            filter.max_freq = fmax;
        }
        let mut acc = [0.0; 3];
        for s in 0..cfg.spp as u64 {
            let mut crng = stream_rng(cfg.seed, pixel, s, 0, Stream::Camera);
            let (jx, jy): (f64, f64) = (crng.random(), crng.random());
            let ray = frame.ray(x as f64 + jx, y as f64 + jy).with_mask(mask);
            let l = ctx.trace(ray, &filter, pixel, s, st);
            for c in 0..3 {
                acc[c] += l[c];
            }
        }
        acc.map(|v| v / cfg.spp as f64)
    });
    Ok(RenderOutput { image, stats, seconds: start.elapsed().as_secs_f64(), motion: None })
}

/// Foveated rendering: each pixel sees only the levels and primitives below
/// its eccentricity-dependent frequency threshold. Tomography by default;
/// path traced when `use_pt` is set.
pub fn render_foveated(field: &Field, cfg: &RenderConfig, fov: &Foveation, use_pt: bool) -> Result<RenderOutput, RenderError> {
    cfg.validate()?;
    let r = Renderer::new(field, cfg)?;
    if use_pt {
        path_trace_with(&r, cfg, Some(fov))
    } else {
        Ok(tomography_with(&r, cfg, Some(fov), None))
    }
}

/// Motion-blurred tomography: the field moves by `m·d·(u − ½)` over the
/// exposure. With `motion.cull`, Gabor groups that blur away are skipped.
pub fn render_motion_blur(field: &Field, cfg: &RenderConfig, motion: &MotionConfig) -> Result<RenderOutput, RenderError> {
    cfg.validate()?;
    let r = Renderer::new(field, cfg)?;
    let start = Instant::now();
    let d = Vec3::from(motion.direction).try_normalize(1e-12).unwrap_or_else(Vec3::zeros);
    let cull: Option<MotionCull> = motion.cull.then(|| motion_cull(field, &d, motion.magnitude, motion.cull_threshold));
    let keep = cull.as_ref().map(|c| c.keep.as_slice());
    let frame = cfg.camera.frame(cfg.width, cfg.height).expect("validated camera");
    let deterministic = cfg.strategy.is_deterministic();
    let full = Decision::full(field.level_count(), field.bin_count());
    let (image, stats) = render_rows(cfg, |x, y, st| {
        let pixel = pixel_id(cfg, x, y);
        let base = frame.pixel_center(x, y);
        let mut q = RayQuery::default();
        let filter = Filter { keep, ..Filter::default() };
        let mut acc = 0.0;
        for s in 0..cfg.spp as u64 {
            let mut trng = stream_rng(cfg.seed, pixel, s, 0, Stream::Time);
            let u: f64 = trng.random();
            let mut ray = base;
            ray.origin -= d * (motion.magnitude * (u - 0.5));
            if let Some(c) = &cull {
                ray.mask = c.mask;
            }
            let tau = if deterministic {
                r.query(&ray, &full, &filter, &mut q, st);
                r.tau_of(&ray, &q)
            } else {
                let mut rng = stream_rng(cfg.seed, pixel, s, 0, Stream::Strategy);
                r.tau_estimate(&ray, &filter, &mut rng, &mut q, st)
            };
            acc += transmittance(tau);
        }
        let t = acc / cfg.spp as f64;
        [t, t, t]
    });
    let report = cull.map(|c| MotionReport {
        reduction: c.reduction(),
        kept: c.keep.iter().filter(|&&k| k).count(),
        culled_groups: c.culled,
    });
    Ok(RenderOutput { image, stats, seconds: start.elapsed().as_secs_f64(), motion: report })
}

/// Dispatches on `cfg.mode`.
pub fn render(field: &Field, cfg: &RenderConfig) -> Result<RenderOutput, RenderError> {
    match cfg.mode {
        Mode::Tomo => render_tomography(field, cfg),
        Mode::Pt => path_trace(field, cfg),
        Mode::Foveated => render_foveated(field, cfg, cfg.foveation.as_ref().expect("validated"), false),
        Mode::MotionBlur => render_motion_blur(field, cfg, cfg.motion.as_ref().expect("validated")),
    }
}
