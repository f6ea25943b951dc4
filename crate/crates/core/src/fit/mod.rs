//! Fitting a voxel density grid with a Gaussian base and a Gabor detail layer.
//!
//! Stage one places Gaussians against a blurred copy of the grid. Stage two
//! adds Gabors and optimizes everything jointly against the sharpest level.

pub mod forward;
pub mod grid;
pub mod optim;
pub mod ssim;
pub mod views;

use std::io::Write;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::field::{Field, FieldError};
use crate::geometry::Vec3;
use crate::kernel::Primitive;

pub use forward::{Group, LossTerms, LossWeights, GradientError, RegNorm, loss_and_grad, render_view};
pub use grid::{GridError, VoxelGrid, fixture_blob, gaussian_pyramid};
pub use optim::{LearningRates, OptimizerState, ResampleError, resample_dead, sgld_step};
pub use views::{View, fibonacci_views, render_reference};

/// Fit settings. Defaults follow the published schedule; `desk()` scales the
/// problem down to a few minutes on one core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub sigma0: f64,
    pub base_level: usize,
    pub eps: f64,
    pub gaussians: usize,
    pub gabors: usize,
    pub views: usize,
    pub resolution: usize,
    /// Views rendered per iteration.
    pub batch: usize,
    pub view_distance: f64,
    pub vfov: f64,
    pub iterations_base: usize,
    pub iterations_gabor: usize,
    pub rates: LearningRates,
    pub warmup_ratio: f64,
    pub min_lr_ratio: f64,
    pub lambda_alpha: f64,
    pub lambda_scale: f64,
    pub reg_norm: RegNorm,
    pub lambda_noise: f64,
    pub gamma: f64,
    pub resample_every: usize,
    pub resample_until: usize,
    /// Initial Gaussian opacity; `None` spreads the grid's mass evenly.
    pub alpha_init: Option<f64>,
    /// Gabor opacity relative to the Gaussian one.
    pub gabor_alpha_ratio: f64,
    pub omega_range: [f64; 2],
    pub gabor_levels: usize,
    pub bins: usize,
    /// Reference ray-march step in voxels.
    pub march_step: f64,
    pub seed: u64,
    /// Skip the Gabor stage.
    pub base_only: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            sigma0: 1.0 / (120.0 * std::f64::consts::PI),
            base_level: 3,
            eps: 0.25,
            gaussians: 4096,
            gabors: 16384,
            views: 32,
            resolution: 768,
            batch: 32,
            view_distance: 4.0,
            vfov: 50.0,
            iterations_base: 300,
            iterations_gabor: 300,
            rates: LearningRates::default(),
            warmup_ratio: 0.15,
            min_lr_ratio: 0.1,
            lambda_alpha: 1e-5,
            lambda_scale: 0.02,
            reg_norm: RegNorm::Mean,
            lambda_noise: 250.0,
            gamma: 0.65,
            resample_every: 30,
            resample_until: 210,
            alpha_init: None,
            gabor_alpha_ratio: 0.1,
            omega_range: [0.7, 1.5],
            gabor_levels: 3,
            bins: 4,
            march_step: 0.25,
            seed: 0,
            base_only: false,
        }
    }
}

impl FitConfig {
    /// 64 Gaussians, 256 Gabors, 8 views at 128².
    pub fn desk() -> Self {
        FitConfig { gaussians: 64, gabors: 256, views: 8, resolution: 128, batch: 8, ..Default::default() }
    }

    pub fn from_toml(s: &str) -> Result<Self, FitError> {
        let c: FitConfig = toml::from_str(s).map_err(|e| FitError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::Config(m.to_string()));
        if !self.rates.all_positive() {
            return bad("learning rates must be positive");
        }
        if self.base_level < 1 {
            return bad("base_level must be at least 1");
        }
        if !(self.sigma0 > 0.0) || !(self.eps > 0.0 && self.eps < 1.0) {
            return bad("sigma0 must be positive and eps in (0, 1)");
        }
        if self.gaussians == 0 || self.views == 0 || self.resolution == 0 || self.batch == 0 {
            return bad("counts must be positive");
        }
        if !(self.omega_range[0] > 0.0 && self.omega_range[0] <= self.omega_range[1]) {
            return bad("omega_range must be an increasing positive pair");
        }
        if self.resample_every == 0 {
            return bad("resample_every must be positive");
        }
        Ok(())
    }

    fn weights(&self, g: &VoxelGrid) -> LossWeights {
        let mut w = LossWeights::new(g.n_max(), domain_len(g));
        w.lambda_alpha = self.lambda_alpha;
        w.lambda_scale = self.lambda_scale;
        w.reg_norm = self.reg_norm;
        w
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error("grid has no mass to place primitives on")]
    EmptyGrid,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Gradient(#[from] GradientError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("loss diverged at stage {stage}, iteration {iter}")]
    Diverged { stage: &'static str, iter: usize, trace: Vec<ProgressRow> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Base,
    Gabor,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::Gabor => "gabor",
        }
    }
}

/// Edge length of the (cubic) domain.
fn domain_len(g: &VoxelGrid) -> f64 {
    let e = g.domain.extent();
    e.x.max(e.y).max(e.z)
}

/// Smallest scale that level `l` of the pyramid can resolve.
pub fn level_min_scale(len: f64, sigma0: f64, level: usize) -> f64 {
    len * sigma0 * (1u64 << level) as f64
}

/// Scale whose Gaussian tail falls to `eps` at the grid's Nyquist frequency.
pub fn nyquist_scale(len: f64, eps: f64, n_max: usize) -> f64 {
    len * (2.0 * (1.0 / eps).ln()).sqrt() / (std::f64::consts::PI * n_max as f64)
}

/// Scale bracket `[s_low, s_high]` for a stage.
pub fn scale_bracket(g: &VoxelGrid, cfg: &FitConfig, stage: Stage) -> (f64, f64) {
    let len = domain_len(g);
    match stage {
        Stage::Base => (
            level_min_scale(len, cfg.sigma0, cfg.base_level),
            level_min_scale(len, cfg.sigma0, cfg.base_level + 1),
        ),
        Stage::Gabor => {
            let lo = 1.5 * nyquist_scale(len, cfg.eps, g.n_max()) * cfg.omega_range[1];
            let hi = level_min_scale(len, cfg.sigma0, cfg.base_level);
            (lo, hi.max(lo))
        }
    }
}

fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let mut c = [0.0f64; 4];
    c.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(Quaternion::new(c[0], c[1], c[2], c[3]))
}

/// Default Gaussian opacity: grid mass spread over the Gaussian count.
pub fn default_alpha(g: &VoxelGrid, count: usize) -> f64 {
    let h = g.voxel_size();
    g.mass() * h.x * h.y * h.z / count.max(1) as f64
}

/// Initial primitives for one stage.
pub fn init_stage<R: Rng + ?Sized>(
    g: &VoxelGrid,
    cfg: &FitConfig,
    stage: Stage,
    rng: &mut R,
) -> Result<Vec<Primitive>, FitError> {
    let count = match stage {
        Stage::Base => cfg.gaussians,
        Stage::Gabor => cfg.gabors,
    };
    let weights: Vec<f64> = g.data.iter().map(|v| v.max(0.0)).collect();
    let pick = WeightedIndex::new(&weights).map_err(|_| FitError::EmptyGrid)?;
    let (s_low, s_high) = scale_bracket(g, cfg, stage);
    let spread = Normal::new(0.0, ((s_high - s_low) / 3.0).max(0.0)).expect("finite spread");
    let base_alpha = cfg.alpha_init.unwrap_or_else(|| default_alpha(g, cfg.gaussians));
    let alpha = match stage {
        Stage::Base => base_alpha,
        Stage::Gabor => base_alpha * cfg.gabor_alpha_ratio,
    };
    let alpha_dist = Normal::new(1.0, 0.25).expect("finite");
    let omega_dist = Uniform::new_inclusive(cfg.omega_range[0], cfg.omega_range[1]).expect("ordered range");
    let jitter = Uniform::new(-0.5, 0.5).expect("ordered range");
    let h = g.voxel_size();
    let [nx, ny, _] = g.dims;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let idx = pick.sample(rng);
        let (i, j, k) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
        let c = g.voxel_center(i, j, k);
        let mu = c + Vec3::new(jitter.sample(rng) * h.x, jitter.sample(rng) * h.y, jitter.sample(rng) * h.z);
        let scale = Vec3::from_fn(|_, _| spread.sample(rng).abs() + s_low);
        let rot = uniform_rotation(rng);
        let a = (alpha * alpha_dist.sample(rng)).max(0.0);
        let p = match stage {
            Stage::Base => Primitive::gabor(mu, rot, scale, a, 0.0),
            Stage::Gabor => Primitive::gabor(mu, rot, scale, a, omega_dist.sample(rng)),
        };
        out.push(p);
    }
    Ok(out)
}

/// One line of the optimization trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressRow {
    pub stage: Stage,
    pub iter: usize,
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub freq: f64,
    pub reg_alpha: f64,
    pub reg_scale: f64,
    pub psnr: f64,
    pub alive: usize,
}

impl ProgressRow {
    pub const CSV_HEADER: &'static str = "stage,iter,total,l1,dssim,freq,reg_alpha,reg_scale,psnr,alive";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.4},{}",
            self.stage.name(),
            self.iter,
            self.total,
            self.l1,
            self.dssim,
            self.freq,
            self.reg_alpha,
            self.reg_scale,
            self.psnr,
            self.alive
        )
    }
}

/// Writes the trace as CSV rows as they arrive.
pub struct CsvSink<W: Write>(pub W);

impl<W: Write> CsvSink<W> {
    pub fn new(mut w: W) -> std::io::Result<Self> {
        writeln!(w, "{}", ProgressRow::CSV_HEADER)?;
        Ok(CsvSink(w))
    }

    pub fn push(&mut self, row: &ProgressRow) -> std::io::Result<()> {
        writeln!(self.0, "{}", row.csv())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub field: Field,
    pub primitives: Vec<Primitive>,
    pub trace: Vec<ProgressRow>,
    /// Level-0 PSNR of the initial Gaussians.
    pub init_psnr: f64,
    pub final_psnr: f64,
}

/// Level-0 references and the views they were taken from.
pub struct Targets {
    pub views: Vec<View>,
    pub base: Vec<Vec<f64>>,
    pub fine: Vec<Vec<f64>>,
}

pub fn targets(g: &VoxelGrid, cfg: &FitConfig) -> Targets {
    use rayon::prelude::*;
    let views = fibonacci_views(cfg.views, cfg.view_distance, cfg.vfov, cfg.resolution);
    let pyr = gaussian_pyramid(g, cfg.sigma0, cfg.base_level + 1);
    let refs = |grid: &VoxelGrid| -> Vec<Vec<f64>> {
        views.par_iter().map(|v| render_reference(grid, v, cfg.march_step)).collect()
    };
    Targets { base: refs(&pyr[cfg.base_level]), fine: refs(&pyr[0]), views }
}

/// PSNR of a primitive set against a set of references.
pub fn tomography_psnr(prims: &[Primitive], views: &[View], refs: &[Vec<f64>]) -> f64 {
    let (mut sq, mut n) = (0.0, 0usize);
    for (v, r) in views.iter().zip(refs) {
        let img = render_view(prims, v);
        sq += img.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        n += img.len();
    }
    if sq == 0.0 { f64::INFINITY } else { -10.0 * (sq / n as f64).log10() }
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    stage: Stage,
    prims: &mut Vec<Primitive>,
    state: &mut OptimizerState,
    views: &[View],
    refs: &[Vec<f64>],
    cfg: &FitConfig,
    weights: &LossWeights,
    clamp: optim::Clamp,
    iterations: usize,
    rng: &mut ChaCha8Rng,
    trace: &mut Vec<ProgressRow>,
    sink: &mut dyn FnMut(&ProgressRow),
) -> Result<(), FitError> {
    let step = optim::StepConfig {
        rates: cfg.rates,
        schedule: optim::Schedule { iterations, warmup_ratio: cfg.warmup_ratio, min_ratio: cfg.min_lr_ratio },
        noise: optim::NoiseConfig { lambda0: cfg.lambda_noise, gamma: cfg.gamma, threshold: optim::DEAD_THRESHOLD },
        clamp,
    };
    let batch = cfg.batch.min(views.len());
    for it in 0..iterations {
        let (bv, br): (Vec<View>, Vec<Vec<f64>>) = if batch == views.len() {
            (views.to_vec(), refs.to_vec())
        } else {
            rand::seq::index::sample(rng, views.len(), batch)
                .into_iter()
                .map(|i| (views[i], refs[i].clone()))
                .unzip()
        };
        let (terms, grads) = loss_and_grad(prims, &bv, &br, weights, true)?;
        let alive = prims.iter().filter(|p| p.alpha >= optim::DEAD_THRESHOLD).count();
        let row = ProgressRow {
            stage,
            iter: it,
            total: terms.total,
            l1: terms.l1,
            dssim: terms.dssim,
            freq: terms.freq,
            reg_alpha: terms.reg_alpha,
            reg_scale: terms.reg_scale,
            psnr: terms.psnr,
            alive,
        };
        trace.push(row);
        sink(&row);
        if !terms.total.is_finite() {
            return Err(FitError::Diverged { stage: stage.name(), iter: it, trace: trace.clone() });
        }
        sgld_step(prims, &grads.expect("gradients requested"), state, &step, it, rng);
        // fields store f32, so anything past its range has diverged as well
        if prims.iter().any(|p| !forward::to_params(p).iter().all(|x| x.abs() <= f32::MAX as f64)) {
            return Err(FitError::Diverged { stage: stage.name(), iter: it, trace: trace.clone() });
        }
        if it > 0 && it % cfg.resample_every == 0 && it <= cfg.resample_until {
            resample_dead(prims, state, optim::DEAD_THRESHOLD, rng)?;
        }
    }
    Ok(())
}

/// Fits `g` and returns the assembled field with its trace.
pub fn fit(g: &VoxelGrid, cfg: &FitConfig, sink: &mut dyn FnMut(&ProgressRow)) -> Result<FitResult, FitError> {
    cfg.validate()?;
    g.validate()?;
    let g = g.pad_to_cube();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = targets(&g, cfg);
    let weights = cfg.weights(&g);
    let clamp = optim::Clamp::for_domain(domain_len(&g));
    let mut prims = init_stage(&g, cfg, Stage::Base, &mut rng)?;
    let init_psnr = tomography_psnr(&prims, &t.views, &t.fine);
    let mut state = OptimizerState::new(prims.len());
    let mut trace = Vec::new();
    run_stage(
        Stage::Base, &mut prims, &mut state, &t.views, &t.base, cfg, &weights, clamp,
        cfg.iterations_base, &mut rng, &mut trace, sink,
    )?;
    if !cfg.base_only && cfg.gabors > 0 {
        let gabors = init_stage(&g, cfg, Stage::Gabor, &mut rng)?;
        state.extend(gabors.len());
        prims.extend(gabors);
        // a fresh schedule for the joint stage
        state.step.iter_mut().for_each(|s| *s = 0);
        state.m.iter_mut().for_each(|m| *m = [0.0; forward::PARAMS]);
        state.v.iter_mut().for_each(|v| *v = [0.0; forward::PARAMS]);
        run_stage(
            Stage::Gabor, &mut prims, &mut state, &t.views, &t.fine, cfg, &weights, clamp,
            cfg.iterations_gabor, &mut rng, &mut trace, sink,
        )?;
    }
    let kept: Vec<Primitive> = prims.iter().copied().filter(|p| p.alpha >= optim::DEAD_THRESHOLD).collect();
    let cutoffs = crate::field::default_cutoffs(&kept, cfg.gabor_levels);
    let field = Field::build(&kept, &cutoffs, cfg.bins)?;
    let final_psnr = tomography_psnr(field.primitives(), &t.views, &t.fine);
    Ok(FitResult { field, primitives: prims, trace, init_psnr, final_psnr })
}
