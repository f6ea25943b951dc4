//! Stochastic selection of pyramid levels and orientation bins.
//!
//! A draw produces a per-level and a per-bin weight table. A primitive at
//! level `l` and bin `b` contributes with weight `levels[l] * bins[b]`; zero
//! means it is skipped. Level and bin draws are independent, and every table
//! has expectation one per entry, so reweighted optical depth is unbiased.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, VisibilityMask, MAX_BINS, MAX_LEVELS};
use crate::geometry::Vec3;
use crate::kernel::Primitive;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("power-law shape must lie in [0, 1), got {0}")]
    Beta(f64),
    #[error("level count {0} outside 1..=8")]
    Levels(usize),
    #[error("alignment threshold must lie in [0, 1], got {0}")]
    Delta(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    Deterministic,
    Uniform,
    PowerLaw,
    UniformCv,
    PowerLawCv,
    PowerLawCvAccum,
}

impl LaplacianKind {
    pub const ALL: [LaplacianKind; 6] = [
        LaplacianKind::Deterministic,
        LaplacianKind::Uniform,
        LaplacianKind::PowerLaw,
        LaplacianKind::UniformCv,
        LaplacianKind::PowerLawCv,
        LaplacianKind::PowerLawCvAccum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LaplacianKind::Deterministic => "deterministic",
            LaplacianKind::Uniform => "uniform",
            LaplacianKind::PowerLaw => "power_law",
            LaplacianKind::UniformCv => "uniform_cv",
            LaplacianKind::PowerLawCv => "power_law_cv",
            LaplacianKind::PowerLawCvAccum => "power_law_cv_accum",
        }
    }

    pub fn parse(s: &str) -> Option<LaplacianKind> {
        LaplacianKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationKind {
    Deterministic,
    ThresholdCull,
    Uniform,
    Importance,
    ThresholdUniform,
}

impl OrientationKind {
    pub const ALL: [OrientationKind; 5] = [
        OrientationKind::Deterministic,
        OrientationKind::ThresholdCull,
        OrientationKind::Uniform,
        OrientationKind::Importance,
        OrientationKind::ThresholdUniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OrientationKind::Deterministic => "deterministic",
            OrientationKind::ThresholdCull => "threshold_cull",
            OrientationKind::Uniform => "uniform",
            OrientationKind::Importance => "importance",
            OrientationKind::ThresholdUniform => "threshold_uniform",
        }
    }

    pub fn parse(s: &str) -> Option<OrientationKind> {
        OrientationKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Policy for choosing pyramid levels per ray.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaplacianStrategy {
    pub kind: LaplacianKind,
    pub beta: f64,
    pub levels: usize,
}

/// Per-level visibility and weight for one draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelDecision {
    pub mask: VisibilityMask,
    pub weights: [f64; MAX_LEVELS],
}

impl LevelDecision {
    pub fn full(levels: usize) -> LevelDecision {
        let mut weights = [0.0; MAX_LEVELS];
        weights[..levels].fill(1.0);
        LevelDecision { mask: VisibilityMask::up_to(levels.saturating_sub(1)), weights }
    }

    /// Largest weight among the selected levels.
    pub fn weight(&self) -> f64 {
        self.weights.iter().cloned().fold(0.0, f64::max)
    }
}

impl LaplacianStrategy {
    pub fn new(kind: LaplacianKind, beta: f64, levels: usize) -> Result<Self, StrategyError> {
        if !(0.0..1.0).contains(&beta) {
            return Err(StrategyError::Beta(beta));
        }
        if !(1..=MAX_LEVELS).contains(&levels) {
            return Err(StrategyError::Levels(levels));
        }
        Ok(LaplacianStrategy { kind, beta, levels })
    }

    pub fn deterministic(levels: usize) -> Self {
        LaplacianStrategy { kind: LaplacianKind::Deterministic, beta: 0.0, levels }
    }

    /// Validated copy resized to `levels`.
    pub fn for_levels(&self, levels: usize) -> Result<Self, StrategyError> {
        LaplacianStrategy::new(self.kind, self.beta, levels)
    }

    /// Draws levels from one uniform number `u ∈ [0, 1)`.
    pub fn sample(&self, u: f64) -> LevelDecision {
        let p = self.levels;
        let one_over = 1.0 - self.beta;
        let bucket = |u: f64, n: usize| ((u * n as f64) as usize).min(n - 1);
        let power_bucket = |u: f64, n: usize| {
            let x = u.powf(1.0 / one_over);
            let j = bucket(x, n);
            let a = j as f64 / n as f64;
            let b = (j + 1) as f64 / n as f64;
            (j, 1.0 / (b.powf(one_over) - a.powf(one_over)))
        };
        let single = |level: usize, w: f64, with_base: bool| {
            let mut weights = [0.0; MAX_LEVELS];
            weights[level] = w;
            let mut mask = VisibilityMask::level(level);
            if with_base {
                weights[0] = 1.0;
                mask = mask.union(VisibilityMask::level(0));
            }
            LevelDecision { mask, weights }
        };
        match self.kind {
            LaplacianKind::Deterministic => LevelDecision::full(p),
            LaplacianKind::Uniform => single(bucket(u, p), p as f64, false),
            LaplacianKind::PowerLaw => {
                let (j, w) = power_bucket(u, p);
                single(j, w, false)
            }
            _ if p == 1 => LevelDecision::full(1),
            LaplacianKind::UniformCv => single(1 + bucket(u, p - 1), (p - 1) as f64, true),
            LaplacianKind::PowerLawCv => {
                let (j, w) = power_bucket(u, p - 1);
                single(1 + j, w, true)
            }
            LaplacianKind::PowerLawCvAccum => {
                let x = u.powf(1.0 / one_over);
                let top = bucket(x, p);
                let mut weights = [0.0; MAX_LEVELS];
                weights[0] = 1.0;
                for (m, w) in weights.iter_mut().enumerate().take(top + 1).skip(1) {
                    *w = 1.0 / (1.0 - (m as f64 / p as f64).powf(one_over));
                }
                LevelDecision { mask: VisibilityMask::up_to(top), weights }
            }
        }
    }
}

/// `|cos θ|` between a direction and a bin axis.
#[inline]
pub fn alignment(v: &Vec3, axis: &Vec3) -> f64 {
    v.dot(axis).abs().min(1.0)
}

/// Relative strength `exp(−f0² a² / 2)` of a Gabor seen at alignment `a`.
#[inline]
pub fn orientation_weight(a: f64, f0: f64) -> f64 {
    (-0.5 * f0 * f0 * a * a).exp()
}

/// Policy for choosing orientation bins per ray.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationStrategy {
    pub kind: OrientationKind,
    pub delta: f64,
    /// Bin axes, index 0 being the Gaussian placeholder.
    pub axes: Vec<Vec3>,
    /// Representative peak frequency per bin.
    pub bin_f0: Vec<f64>,
}

/// Per-bin weight for one draw; zero means skipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinDecision {
    pub weights: [f64; MAX_BINS],
}

impl BinDecision {
    pub fn full(bins: usize) -> BinDecision {
        let mut weights = [0.0; MAX_BINS];
        weights[..bins].fill(1.0);
        BinDecision { weights }
    }
}

impl OrientationStrategy {
    pub fn new(kind: OrientationKind, delta: f64, axes: Vec<Vec3>, bin_f0: Vec<f64>) -> Result<Self, StrategyError> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(StrategyError::Delta(delta));
        }
        assert_eq!(axes.len(), bin_f0.len());
        assert!(!axes.is_empty() && axes.len() <= MAX_BINS);
        Ok(OrientationStrategy { kind, delta, axes, bin_f0 })
    }

    /// Strategy over the bins of `field`, using the median member frequency
    /// per bin.
    ///
    /// The frequency is measured relative to the envelope, `‖(ω, ω, ω)‖`: a
    /// ray at alignment `a` sees the line integral of such a kernel damped by
    /// `exp(−(a·ω√3)²/2)`, which is what [`orientation_weight`] models.
    pub fn for_field(kind: OrientationKind, delta: f64, field: &Field) -> Result<Self, StrategyError> {
        let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); field.bin_count()];
        for (i, p) in field.primitives().iter().enumerate() {
            per_bin[field.bin_of(i)].push(p.omega * 3f64.sqrt());
        }
        let bin_f0 = per_bin.into_iter().map(median).collect();
        OrientationStrategy::new(kind, delta, field.bin_axes().to_vec(), bin_f0)
    }

    pub fn deterministic(bins: usize) -> Self {
        OrientationStrategy {
            kind: OrientationKind::Deterministic,
            delta: 1.0,
            axes: crate::field::default_bin_axes(bins),
            bin_f0: vec![0.0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.axes.len()
    }

    /// Draws bins for a ray direction from one uniform number.
    pub fn sample(&self, dir: &Vec3, u: f64) -> BinDecision {
        let k = self.bins();
        let mut out = BinDecision::full(k);
        if k <= 1 || self.kind == OrientationKind::Deterministic {
            return out;
        }
        let gabor = 1..k;
        let aligned = |i: usize| alignment(dir, &self.axes[i]);
        let pick_uniform = |out: &mut BinDecision, set: &[usize], u: f64| {
            for &i in set {
                out.weights[i] = 0.0;
            }
            let j = ((u * set.len() as f64) as usize).min(set.len() - 1);
            out.weights[set[j]] = set.len() as f64;
        };
        match self.kind {
            OrientationKind::Deterministic => {}
            OrientationKind::ThresholdCull => {
                for i in gabor {
                    if aligned(i) > self.delta {
                        out.weights[i] = 0.0;
                    }
                }
            }
            OrientationKind::Uniform => {
                let set: Vec<usize> = gabor.collect();
                pick_uniform(&mut out, &set, u);
            }
            OrientationKind::Importance => {
                let w: Vec<f64> = gabor.clone().map(|i| orientation_weight(aligned(i), self.bin_f0[i])).collect();
                let total: f64 = w.iter().sum();
                if !(total > 0.0) || !total.is_finite() {
                    let set: Vec<usize> = gabor.collect();
                    pick_uniform(&mut out, &set, u);
                    return out;
                }
                for i in gabor.clone() {
                    out.weights[i] = 0.0;
                }
                let target = u * total;
                let mut acc = 0.0;
                let mut chosen = None;
                for (j, &wj) in w.iter().enumerate() {
                    acc += wj;
                    if wj > 0.0 && target < acc {
                        chosen = Some(j);
                        break;
                    }
                }
                // rounding can leave the target past the last bucket
                let j = chosen.unwrap_or_else(|| w.iter().rposition(|&x| x > 0.0).unwrap());
                out.weights[1 + j] = total / w[j];
            }
            OrientationKind::ThresholdUniform => {
                let above: Vec<usize> = gabor.filter(|&i| aligned(i) > self.delta).collect();
                if !above.is_empty() {
                    pick_uniform(&mut out, &above, u);
                }
            }
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Serializable description of a level and bin policy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub laplacian: LaplacianKind,
    #[serde(default)]
    pub beta: f64,
    pub orientation: OrientationKind,
    #[serde(default = "one")]
    pub delta: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig::deterministic()
    }
}

impl StrategyConfig {
    pub fn deterministic() -> Self {
        StrategyConfig {
            laplacian: LaplacianKind::Deterministic,
            beta: 0.0,
            orientation: OrientationKind::Deterministic,
            delta: 1.0,
        }
    }

    pub fn levels(kind: LaplacianKind, beta: f64) -> Self {
        StrategyConfig { laplacian: kind, beta, ..StrategyConfig::deterministic() }
    }

    pub fn bins(kind: OrientationKind, delta: f64) -> Self {
        StrategyConfig { orientation: kind, delta, ..StrategyConfig::deterministic() }
    }

    pub fn is_deterministic(&self) -> bool {
        self.laplacian == LaplacianKind::Deterministic
            && (self.orientation == OrientationKind::Deterministic
                || (self.orientation == OrientationKind::ThresholdCull && self.delta >= 1.0))
    }

    pub fn label(&self) -> String {
        format!("{}+{}", self.laplacian.name(), self.orientation.name())
    }

    /// Parses `laplacian[:beta][+orientation[:delta]]`, e.g. `power_law_cv:0.5+importance`.
    ///
    /// β defaults to 0.5 and δ to 1.
    pub fn parse(s: &str) -> Option<StrategyConfig> {
        fn part(s: &str, default: f64) -> Option<(&str, f64)> {
            match s.split_once(':') {
                None => Some((s, default)),
                Some((name, v)) => Some((name, v.parse().ok()?)),
            }
        }
        let (lap, orient) = match s.trim().split_once('+') {
            Some((a, b)) => (a, Some(b)),
            None => (s.trim(), None),
        };
        let (name, beta) = part(lap, 0.5)?;
        let laplacian = LaplacianKind::parse(name)?;
        let (orientation, delta) = match orient {
            None => (OrientationKind::Deterministic, 1.0),
            Some(o) => {
                let (name, delta) = part(o, 1.0)?;
                (OrientationKind::parse(name)?, delta)
            }
        };
        let beta = if laplacian == LaplacianKind::Deterministic { 0.0 } else { beta };
        Some(StrategyConfig { laplacian, beta, orientation, delta })
    }

    pub fn compile(&self, field: &Field) -> Result<Sampler, StrategyError> {
        Ok(Sampler {
            levels: LaplacianStrategy::new(self.laplacian, self.beta, field.level_count())?,
            bins: OrientationStrategy::for_field(self.orientation, self.delta, field)?,
        })
    }
}

/// A strategy bound to a particular field.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampler {
    pub levels: LaplacianStrategy,
    pub bins: OrientationStrategy,
}

/// Combined level and bin weights for one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub levels: LevelDecision,
    pub bins: BinDecision,
}

impl Decision {
    pub fn full(levels: usize, bins: usize) -> Decision {
        Decision { levels: LevelDecision::full(levels), bins: BinDecision::full(bins) }
    }

    #[inline]
    pub fn weight(&self, level: usize, bin: usize) -> f64 {
        self.levels.weights[level] * self.bins.weights[bin]
    }

    pub fn mask(&self) -> VisibilityMask {
        self.levels.mask
    }
}

impl Sampler {
    pub fn deterministic(field: &Field) -> Sampler {
        StrategyConfig::deterministic().compile(field).expect("deterministic strategy is valid")
    }

    pub fn draw<R: Rng + ?Sized>(&self, dir: &Vec3, rng: &mut R) -> Decision {
        let u_level: f64 = rng.random();
        let u_bin: f64 = rng.random();
        Decision { levels: self.levels.sample(u_level), bins: self.bins.sample(dir, u_bin) }
    }
}

/// Identifies an independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Camera = 0,
    Strategy = 1,
    NeeStrategy = 2,
    Distance = 3,
    Scatter = 4,
    Time = 5,
    Foveation = 6,
    Roulette = 7,
}

pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based generator for a `(pixel, sample, depth, stream)` tuple.
pub fn stream_rng(seed: u64, pixel: u64, sample: u64, depth: u64, stream: Stream) -> ChaCha8Rng {
    let mut h = mix(seed);
    for v in [pixel, sample, depth, stream as u64] {
        h = mix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Per-pixel frequency cutoff for foveated rendering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Foveation {
    pub gaze: [f64; 2],
    /// Frequency drop per pixel of eccentricity.
    pub slope: f64,
    pub f_min: f64,
    pub f_max: f64,
    #[serde(default)]
    pub jitter: f64,
    /// Also apply the per-primitive frequency filter inside visible levels.
    #[serde(default = "yes")]
    pub fine: bool,
}

fn yes() -> bool {
    true
}

pub fn foveation_threshold(pixel: [f64; 2], gaze: [f64; 2], slope: f64, f_min: f64, f_max: f64, jitter: f64, u: f64) -> f64 {
    let ecc = ((pixel[0] - gaze[0]).powi(2) + (pixel[1] - gaze[1]).powi(2)).sqrt();
    (f_max - slope * ecc).clamp(f_min, f_max) + jitter * (u - 0.5) * (f_max - f_min)
}

impl Foveation {
    pub fn threshold(&self, pixel: [f64; 2], u: f64) -> f64 {
        foveation_threshold(pixel, self.gaze, self.slope, self.f_min, self.f_max, self.jitter, u)
    }
}

/// Unnormalized `sin(x)/x`.
#[inline]
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Contrast left in a Gabor after box-filtering it over a displacement `m·d`.
pub fn motion_attenuation(p: &Primitive, d: &Vec3, m: f64) -> f64 {
    let w = p.kernel().map(|k| k.modulation()).unwrap_or_else(|_| Vec3::zeros());
    sinc(m * w.dot(d).abs()).abs()
}

/// Outcome of motion-based culling.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionCull {
    /// Culled `(level, bin)` groups.
    pub culled: Vec<(usize, usize)>,
    /// Per-primitive keep flags.
    pub keep: Vec<bool>,
    /// Levels with at least one surviving group.
    pub mask: VisibilityMask,
    /// Group attenuations, `(level, bin, mean f0, attenuation)`.
    pub groups: Vec<(usize, usize, f64, f64)>,
}

impl MotionCull {
    pub fn reduction(&self) -> f64 {
        let n = self.keep.len();
        if n == 0 {
            return 0.0;
        }
        self.keep.iter().filter(|&&k| !k).count() as f64 / n as f64
    }
}

/// Culls Gabor groups whose motion-blurred contrast drops below `threshold`.
pub fn motion_cull(field: &Field, d: &Vec3, m: f64, threshold: f64) -> MotionCull {
    let (levels, bins) = (field.level_count(), field.bin_count());
    let mut sum = vec![0.0; levels * bins];
    let mut count = vec![0usize; levels * bins];
    for (i, p) in field.primitives().iter().enumerate() {
        let g = field.level_of(i) * bins + field.bin_of(i);
        sum[g] += p.peak_frequency();
        count[g] += 1;
    }
    let mut culled = Vec::new();
    let mut groups = Vec::new();
    for l in 1..levels {
        for b in 1..bins {
            let g = l * bins + b;
            if count[g] == 0 {
                continue;
            }
            let f0 = sum[g] / count[g] as f64;
            let att = sinc(m * f0 * alignment(d, &field.bin_axes()[b])).abs();
            groups.push((l, b, f0, att));
            if att < threshold {
                culled.push((l, b));
            }
        }
    }
    let keep: Vec<bool> = (0..field.len())
        .map(|i| !culled.contains(&(field.level_of(i), field.bin_of(i))))
        .collect();
    let mut mask = VisibilityMask::NONE;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            mask = mask.union(VisibilityMask::level(field.level_of(i)));
        }
    }
    mask = mask.union(VisibilityMask::level(0));
    MotionCull { culled, keep, mask, groups }
}
