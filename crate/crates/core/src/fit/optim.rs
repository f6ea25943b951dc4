//! Adaptive-moment updates with Langevin center noise, and dead-primitive
//! resampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::kernel::Primitive;

use super::forward::{PARAMS, group_of, Group};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Opacity below which a primitive counts as dead.
pub const DEAD_THRESHOLD: f64 = 1e-6;

/// Smallest frequency a Gabor may shrink to before it would read as a Gaussian.
pub const MIN_GABOR_OMEGA: f64 = 1e-3;

/// Per-group base learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub mu: f64,
    pub scale: f64,
    pub rot: f64,
    pub alpha: f64,
    pub omega: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates { mu: 0.012, scale: 0.0008, rot: 0.0012, alpha: 0.00008, omega: 0.002 }
    }
}

impl LearningRates {
    pub fn of(&self, g: Group) -> f64 {
        match g {
            Group::Mu => self.mu,
            Group::Rot => self.rot,
            Group::Scale => self.scale,
            Group::Alpha => self.alpha,
            Group::Omega => self.omega,
        }
    }

    pub fn all_positive(&self) -> bool {
        Group::ALL.iter().all(|&g| self.of(g) > 0.0 && self.of(g).is_finite())
    }
}

/// Cosine decay with linear warmup.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub iterations: usize,
    pub warmup_ratio: f64,
    pub min_ratio: f64,
}

impl Schedule {
    /// Multiplier on the base rates at iteration `it`.
    pub fn factor(&self, it: usize) -> f64 {
        let warm = (self.warmup_ratio * self.iterations as f64).round() as usize;
        if it < warm {
            return (it + 1) as f64 / warm as f64;
        }
        let span = self.iterations.saturating_sub(warm).max(1) as f64;
        let t = ((it - warm) as f64 / span).min(1.0);
        self.min_ratio + (1.0 - self.min_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Langevin noise on centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub lambda0: f64,
    pub gamma: f64,
    pub threshold: f64,
}

impl NoiseConfig {
    pub fn at(&self, it: usize) -> f64 {
        self.lambda0 * self.gamma.powi(it as i32)
    }

    /// Opacity gate `sigmoid(−100 (t − α))`.
    pub fn gate(&self, alpha: f64) -> f64 {
        1.0 / (1.0 + (100.0 * (self.threshold - alpha)).exp())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<[f64; PARAMS]>,
    pub v: Vec<[f64; PARAMS]>,
    pub step: Vec<u64>,
    pub alive: Vec<bool>,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState {
            m: vec![[0.0; PARAMS]; n],
            v: vec![[0.0; PARAMS]; n],
            step: vec![0; n],
            alive: vec![true; n],
        }
    }

    pub fn reset(&mut self, i: usize) {
        self.m[i] = [0.0; PARAMS];
        self.v[i] = [0.0; PARAMS];
        self.step[i] = 0;
    }

    pub fn extend(&mut self, n: usize) {
        let len = self.m.len() + n;
        self.m.resize(len, [0.0; PARAMS]);
        self.v.resize(len, [0.0; PARAMS]);
        self.step.resize(len, 0);
        self.alive.resize(len, true);
    }
}

/// Sample of `N(0, Σ)` for the primitive's covariance, drawn as `R S η`.
pub fn center_noise<R: Rng + ?Sized>(p: &Primitive, rng: &mut R) -> Vec3 {
    let eta = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
    p.rotation() * eta.component_mul(&p.scales())
}

/// Bounds applied after every update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clamp {
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Clamp {
    pub fn for_domain(len: f64) -> Self {
        Clamp { min_scale: 1e-5 * len, max_scale: len }
    }

    pub fn apply(&self, p: &mut Primitive, gabor: bool) {
        for s in &mut p.scale {
            *s = s.clamp(self.min_scale, self.max_scale);
        }
        p.alpha = p.alpha.max(0.0);
        p.omega = if gabor { p.omega.max(MIN_GABOR_OMEGA) } else { 0.0 };
        let n = p.rot.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            p.rot.iter_mut().for_each(|v| *v /= n);
        } else {
            p.rot = [1.0, 0.0, 0.0, 0.0];
        }
    }
}

/// Settings of one optimizer step.
#[derive(Clone, Copy, Debug)]
pub struct StepConfig {
    pub rates: LearningRates,
    pub schedule: Schedule,
    pub noise: NoiseConfig,
    pub clamp: Clamp,
}

/// One adaptive-moment step over all primitives, followed by center noise
/// on the live ones and clamping.
pub fn sgld_step<R: Rng + ?Sized>(
    prims: &mut [Primitive],
    grads: &[[f64; PARAMS]],
    state: &mut OptimizerState,
    cfg: &StepConfig,
    it: usize,
    rng: &mut R,
) {
    let lr_scale = cfg.schedule.factor(it);
    let lambda = cfg.noise.at(it);
    for (i, p) in prims.iter_mut().enumerate() {
        let gabor = !p.is_gaussian();
        state.step[i] += 1;
        let t = state.step[i] as i32;
        let mut x = super::forward::to_params(p);
        for j in 0..PARAMS {
            let group = group_of(j);
            if group == Group::Omega && !gabor {
                continue;
            }
            let g = grads[i][j];
            let m = BETA1 * state.m[i][j] + (1.0 - BETA1) * g;
            let v = BETA2 * state.v[i][j] + (1.0 - BETA2) * g * g;
            state.m[i][j] = m;
            state.v[i][j] = v;
            let mh = m / (1.0 - BETA1.powi(t));
            let vh = v / (1.0 - BETA2.powi(t));
            x[j] -= cfg.rates.of(group) * lr_scale * mh / (vh.sqrt() + ADAM_EPS);
        }
        if lambda > 0.0 {
            let amp = lambda * cfg.rates.mu * lr_scale * cfg.noise.gate(p.alpha);
            if amp > 0.0 {
                let n = center_noise(p, rng) * amp;
                for d in 0..3 {
                    x[d] += n[d];
                }
            } else {
                // keep the stream aligned regardless of the gate
                let _ = center_noise(p, rng);
            }
        }
        *p = super::forward::from_params(&x);
        cfg.clamp.apply(p, gabor);
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ResampleError {
    #[error("no alive primitives left to resample onto")]
    NoneAlive,
}

/// What a resampling pass did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResampleReport {
    /// `(dead, target)` pairs.
    pub moves: Vec<(usize, usize)>,
    /// Dead primitives left in place because no live primitive of their type exists.
    pub stranded: Vec<usize>,
}

/// Teleports dead primitives onto live ones of the same type, chosen in
/// proportion to their integral, and splits the target's weight evenly
/// across all copies.
pub fn resample_dead<R: Rng + ?Sized>(
    prims: &mut [Primitive],
    state: &mut OptimizerState,
    threshold: f64,
    rng: &mut R,
) -> Result<ResampleReport, ResampleError> {
    let dead: Vec<usize> = (0..prims.len()).filter(|&i| prims[i].alpha < threshold).collect();
    for i in 0..prims.len() {
        state.alive[i] = prims[i].alpha >= threshold;
    }
    if dead.is_empty() {
        return Ok(ResampleReport::default());
    }
    if dead.len() == prims.len() {
        return Err(ResampleError::NoneAlive);
    }
    let mut report = ResampleReport::default();
    let mut arrivals: Vec<Vec<usize>> = vec![Vec::new(); prims.len()];
    for kind in [true, false] {
        let live: Vec<usize> =
            (0..prims.len()).filter(|&i| state.alive[i] && prims[i].is_gaussian() == kind).collect();
        let weights: Vec<f64> = live.iter().map(|&i| prims[i].whole_space_integral().max(0.0)).collect();
        let pick = WeightedIndex::new(&weights).ok();
        for &d in dead.iter().filter(|&&d| prims[d].is_gaussian() == kind) {
            match &pick {
                Some(w) => {
                    let t = live[w.sample(rng)];
                    arrivals[t].push(d);
                    report.moves.push((d, t));
                }
                None => report.stranded.push(d),
            }
        }
    }
    for (t, group) in arrivals.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        let mut copy = prims[t];
        copy.alpha /= (group.len() + 1) as f64;
        prims[t] = copy;
        state.reset(t);
        for &d in group {
            prims[d] = copy;
            state.alive[d] = true;
        }
    }
    Ok(report)
}
