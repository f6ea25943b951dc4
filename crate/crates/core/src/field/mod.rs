//! Mixtures of kernels organized as a frequency pyramid with orientation bins.
//!
//! Every primitive has a pyramid level and an orientation bin. Level 0 holds
//! the Gaussians; Gabor levels are brackets of peak frequency. Bin 0 also holds
//! the Gaussians, the remaining bins partition Gabors by the axis of their
//! modulation vector.

pub mod axes;
pub mod gff;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::fmt;

use crate::geometry::{Aabb, Vec3};
use crate::kernel::{Kernel, KernelError, Primitive, SIGMA_EXTENT};

/// Hard cap on pyramid levels, one bit each in a [`VisibilityMask`].
pub const MAX_LEVELS: usize = 8;
/// Hard cap on orientation bins (bin 0 plus the Gabor axes).
pub const MAX_BINS: usize = axes::MAX_AXES + 1;

pub const DEFAULT_GABOR_LEVELS: usize = 3;
pub const DEFAULT_BINS: usize = 4;

/// Bit set of visible pyramid levels.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct VisibilityMask(pub u8);

impl VisibilityMask {
    pub const NONE: VisibilityMask = VisibilityMask(0);
    pub const ALL: VisibilityMask = VisibilityMask(0xFF);

    /// Mask of a single level. Panics for `level >= 8`; use [`level_mask`]
    /// for fallible construction.
    pub const fn level(level: usize) -> VisibilityMask {
        assert!(level < MAX_LEVELS);
        VisibilityMask(1 << level)
    }

    /// Levels `0..=top`.
    pub fn up_to(top: usize) -> VisibilityMask {
        let top = top.min(MAX_LEVELS - 1);
        VisibilityMask(((1u16 << (top + 1)) - 1) as u8)
    }

    #[inline]
    pub fn intersects(self, other: VisibilityMask) -> bool {
        self.0 & other.0 != 0
    }

    #[inline]
    pub fn has_level(self, level: usize) -> bool {
        level < MAX_LEVELS && self.0 & (1 << level) != 0
    }

    pub fn union(self, other: VisibilityMask) -> VisibilityMask {
        VisibilityMask(self.0 | other.0)
    }

    pub fn levels(self) -> impl Iterator<Item = usize> {
        (0..MAX_LEVELS).filter(move |&l| self.has_level(l))
    }
}

impl fmt::Debug for VisibilityMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VisibilityMask({:#010b})", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("primitive {index}: {source}")]
    Primitive { index: usize, source: KernelError },
    #[error("level cutoffs must be finite, non-negative and strictly ascending: {0:?}")]
    Cutoffs(Vec<f64>),
    #[error("{count} levels requested, at most {MAX_LEVELS} supported")]
    TooManyLevels { count: usize },
    #[error("bin count {0} outside 1..={MAX_BINS}")]
    BinCount(usize),
    #[error("level index {0} does not fit an 8-bit mask")]
    MaskOverflow(usize),
    #[error("{} primitive(s) fall outside the level cutoffs: {offenders:?}", offenders.len())]
    Assignment { offenders: Vec<(usize, f64)> },
    #[error("inconsistent field layout: {0}")]
    Layout(String),
}

/// [`VisibilityMask`] of a set of levels.
pub fn level_mask<I: IntoIterator<Item = usize>>(levels: I) -> Result<VisibilityMask, FieldError> {
    let mut bits = 0u8;
    for l in levels {
        if l >= MAX_LEVELS {
            return Err(FieldError::MaskOverflow(l));
        }
        bits |= 1 << l;
    }
    Ok(VisibilityMask(bits))
}

/// Result of pruning against a maximum frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct Pruning {
    /// Levels that may contain a kept primitive.
    pub coarse: VisibilityMask,
    /// Per-primitive keep flags, a subset of the coarse selection.
    pub keep: Vec<bool>,
}

impl Pruning {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Power spectrum sampled on a DFT lattice, `x` fastest.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub n: usize,
    pub domain: Aabb,
    pub power: Vec<f64>,
}

impl Spectrum {
    /// Signed DFT index along one axis for storage index `i`.
    #[inline]
    pub fn signed_index(&self, i: usize) -> i64 {
        spectral_index(i, self.n)
    }

    /// Angular frequency of the lattice point `(i, j, k)`.
    pub fn frequency(&self, i: usize, j: usize, k: usize) -> Vec3 {
        lattice_frequency(&self.domain, self.n, [i, j, k])
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.power[i + self.n * (j + self.n * k)]
    }

    /// Sum of power over lattice points whose frequency norm satisfies `pred`.
    pub fn band_power(&self, pred: impl Fn(f64) -> bool) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.n {
            for j in 0..self.n {
                for i in 0..self.n {
                    if pred(self.frequency(i, j, k).norm()) {
                        acc += self.at(i, j, k);
                    }
                }
            }
        }
        acc
    }
}

#[inline]
fn spectral_index(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

fn lattice_frequency(domain: &Aabb, n: usize, idx: [usize; 3]) -> Vec3 {
    let e = domain.extent();
    Vec3::from_fn(|a, _| std::f64::consts::TAU * spectral_index(idx[a], n) as f64 / e[a])
}

/// An immutable, assigned mixture.
#[derive(Clone, Debug)]
pub struct Field {
    primitives: Vec<Primitive>,
    kernels: Vec<Kernel>,
    level_of: Vec<u8>,
    bin_of: Vec<u8>,
    cutoffs: Vec<f64>,
    bin_axes: Vec<Vec3>,
    bounds: Aabb,
}

/// Log-spaced cutoffs covering every Gabor in `prims` with `gabor_levels` brackets.
///
/// Returns `gabor_levels + 1` boundaries; an all-Gaussian input gets a
/// single zero cutoff.
pub fn default_cutoffs(prims: &[Primitive], gabor_levels: usize) -> Vec<f64> {
    let f0s: Vec<f64> = prims
        .iter()
        .filter(|p| !p.is_gaussian())
        .map(|p| p.quantized().peak_frequency())
        .collect();
    if f0s.is_empty() || gabor_levels == 0 {
        return vec![0.0];
    }
    let lo = f0s.iter().cloned().fold(f64::INFINITY, f64::min) * (1.0 - 1e-6);
    let hi = f0s.iter().cloned().fold(0.0, f64::max) * (1.0 + 1e-6);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..=gabor_levels)
        .map(|i| (llo + (lhi - llo) * i as f64 / gabor_levels as f64).exp())
        .collect()
}

/// Bins the Gabor axes for `bin_count` bins; index 0 is a placeholder.
pub fn default_bin_axes(bin_count: usize) -> Vec<Vec3> {
    let mut out = vec![Vec3::z()];
    if bin_count > 1 {
        out.extend(axes::packing(bin_count - 1));
    }
    out
}

fn q32(v: f64) -> f64 {
    v as f32 as f64
}

fn check_cutoffs(cutoffs: &[f64]) -> Result<(), FieldError> {
    let ok = !cutoffs.is_empty()
        && cutoffs.iter().all(|c| c.is_finite() && *c >= 0.0)
        && cutoffs.windows(2).all(|w| w[0] < w[1]);
    if !ok {
        return Err(FieldError::Cutoffs(cutoffs.to_vec()));
    }
    if cutoffs.len() > MAX_LEVELS {
        return Err(FieldError::TooManyLevels { count: cutoffs.len() });
    }
    Ok(())
}

/// Level of a primitive with peak frequency `f0`, or `None` if it escapes
/// every bracket.
pub fn assign_level(f0: f64, is_gaussian: bool, cutoffs: &[f64]) -> Option<usize> {
    if is_gaussian {
        return Some(0);
    }
    (1..cutoffs.len()).find(|&l| cutoffs[l - 1] <= f0 && f0 < cutoffs[l])
}

/// Bin of a modulation direction: `1 + argmax |dir · axis|`, first on ties.
pub fn assign_bin(modulation: &Vec3, bin_axes: &[Vec3]) -> usize {
    if bin_axes.len() <= 1 || modulation.norm_squared() == 0.0 {
        return 0;
    }
    let mut best = (1, f64::NEG_INFINITY);
    for (i, a) in bin_axes.iter().enumerate().skip(1) {
        let c = modulation.dot(a).abs();
        if c > best.1 {
            best = (i, c);
        }
    }
    best.0
}

/// Builds a field with explicit cutoffs and bin count.
pub fn build_field(prims: &[Primitive], cutoffs: &[f64], bin_count: usize) -> Result<Field, FieldError> {
    Field::build(prims, cutoffs, bin_count)
}

impl Field {
    pub fn build(prims: &[Primitive], cutoffs: &[f64], bin_count: usize) -> Result<Field, FieldError> {
        check_cutoffs(cutoffs)?;
        if !(1..=MAX_BINS).contains(&bin_count) {
            return Err(FieldError::BinCount(bin_count));
        }
        let cutoffs: Vec<f64> = cutoffs.iter().map(|&c| q32(c)).collect();
        check_cutoffs(&cutoffs)?;
        let bin_axes: Vec<Vec3> = default_bin_axes(bin_count).iter().map(|a| a.map(q32)).collect();
        let primitives: Vec<Primitive> = prims.iter().map(Primitive::quantized).collect();
        let kernels = make_kernels(&primitives)?;
        let mut level_of = Vec::with_capacity(prims.len());
        let mut bin_of = Vec::with_capacity(prims.len());
        let mut offenders = Vec::new();
        for (i, (p, k)) in primitives.iter().zip(&kernels).enumerate() {
            let f0 = p.peak_frequency();
            match assign_level(f0, p.is_gaussian(), &cutoffs) {
                Some(l) => level_of.push(l as u8),
                None => {
                    offenders.push((i, f0));
                    level_of.push(0);
                }
            }
            bin_of.push(if p.is_gaussian() { 0 } else { assign_bin(&k.modulation(), &bin_axes) as u8 });
        }
        if !offenders.is_empty() {
            return Err(FieldError::Assignment { offenders });
        }
        let bounds = quantized_bounds(&kernels);
        Ok(Field { primitives, kernels, level_of, bin_of, cutoffs, bin_axes, bounds })
    }

    /// Default pyramid: one Gaussian level plus three log-spaced Gabor levels, four bins.
    pub fn with_defaults(prims: &[Primitive]) -> Result<Field, FieldError> {
        let cutoffs = default_cutoffs(prims, DEFAULT_GABOR_LEVELS);
        Field::build(prims, &cutoffs, DEFAULT_BINS)
    }

    pub fn empty() -> Field {
        Field::with_defaults(&[]).expect("empty field is valid")
    }

    /// Reassembles a field from stored parts, checking every invariant.
    pub fn from_parts(
        primitives: Vec<Primitive>,
        level_of: Vec<u8>,
        bin_of: Vec<u8>,
        cutoffs: Vec<f64>,
        bin_axes: Vec<Vec3>,
        bounds: Aabb,
    ) -> Result<Field, FieldError> {
        check_cutoffs(&cutoffs)?;
        let n = primitives.len();
        if level_of.len() != n || bin_of.len() != n {
            return Err(FieldError::Layout("level/bin tables do not match primitive count".into()));
        }
        if bin_axes.is_empty() || bin_axes.len() > MAX_BINS {
            return Err(FieldError::BinCount(bin_axes.len()));
        }
        let kernels = make_kernels(&primitives)?;
        let mut offenders = Vec::new();
        for (i, p) in primitives.iter().enumerate() {
            let f0 = p.peak_frequency();
            if assign_level(f0, p.is_gaussian(), &cutoffs) != Some(level_of[i] as usize) {
                offenders.push((i, f0));
            }
            if (bin_of[i] as usize) >= bin_axes.len() || (p.is_gaussian() && bin_of[i] != 0) {
                return Err(FieldError::Layout(format!("primitive {i} has invalid bin {}", bin_of[i])));
            }
        }
        if !offenders.is_empty() {
            return Err(FieldError::Assignment { offenders });
        }
        Ok(Field { primitives, kernels, level_of, bin_of, cutoffs, bin_axes, bounds })
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn level_of(&self, i: usize) -> usize {
        self.level_of[i] as usize
    }

    pub fn bin_of(&self, i: usize) -> usize {
        self.bin_of[i] as usize
    }

    pub fn levels(&self) -> &[u8] {
        &self.level_of
    }

    pub fn bins(&self) -> &[u8] {
        &self.bin_of
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    pub fn bin_axes(&self) -> &[Vec3] {
        &self.bin_axes
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn level_count(&self) -> usize {
        self.cutoffs.len()
    }

    pub fn bin_count(&self) -> usize {
        self.bin_axes.len()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.level_count()];
        for &l in &self.level_of {
            c[l as usize] += 1;
        }
        c
    }

    pub fn gabor_count(&self) -> usize {
        self.primitives.iter().filter(|p| !p.is_gaussian()).count()
    }

    /// Weighted density at `x`.
    pub fn density(&self, x: &Vec3) -> f64 {
        self.kernels.iter().map(|k| k.alpha() * k.eval(x)).sum()
    }

    /// Primitives visible under `mask`.
    pub fn visible(&self, mask: VisibilityMask) -> Vec<usize> {
        (0..self.len()).filter(|&i| mask.has_level(self.level_of(i))).collect()
    }

    /// A field holding only the primitives for which `keep` holds, with the
    /// same pyramid layout and original order.
    pub fn sub_field(&self, keep: impl Fn(usize) -> bool) -> Field {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Field {
            primitives: idx.iter().map(|&i| self.primitives[i]).collect(),
            kernels: idx.iter().map(|&i| self.kernels[i].clone()).collect(),
            level_of: idx.iter().map(|&i| self.level_of[i]).collect(),
            bin_of: idx.iter().map(|&i| self.bin_of[i]).collect(),
            cutoffs: self.cutoffs.clone(),
            bin_axes: self.bin_axes.clone(),
            bounds: self.bounds,
        }
    }

    /// Levels and primitives that survive a maximum frequency `f_max`.
    /// Level 0 plus every level whose lower cutoff lies below `f_max`.
    pub fn coarse_mask(&self, f_max: f64) -> VisibilityMask {
        let mut coarse = VisibilityMask::level(0);
        for l in 1..self.level_count() {
            if self.cutoffs[l - 1] < f_max {
                coarse = coarse.union(VisibilityMask::level(l));
            }
        }
        coarse
    }

    pub fn prune_to_max_frequency(&self, f_max: f64) -> Pruning {
        let coarse = self.coarse_mask(f_max);
        let keep = self
            .primitives
            .iter()
            .enumerate()
            .map(|(i, p)| coarse.has_level(self.level_of(i)) && (p.is_gaussian() || p.peak_frequency() < f_max))
            .collect();
        Pruning { coarse, keep }
    }

    /// Sub-field after pruning with the fine mask.
    pub fn pruned(&self, f_max: f64) -> Field {
        let p = self.prune_to_max_frequency(f_max);
        self.sub_field(|i| p.keep[i])
    }

    /// Analytic power spectrum `|Σ αᵢ Fᵢ(k)|²` on the DFT lattice of `domain`.
    pub fn spectrum(&self, grid_n: usize, domain: &Aabb) -> Spectrum {
        assert!(grid_n >= 8, "spectrum grid must be at least 8");
        let n = grid_n;
        let mut power = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let w = lattice_frequency(domain, n, [i, j, k]);
                    let f: Complex64 = self.kernels.iter().map(|g| g.fourier_transform(&w) * g.alpha()).sum();
                    power.push(f.norm_sqr());
                }
            }
        }
        Spectrum { n, domain: *domain, power }
    }

    /// Power on the lattice plane through DC perpendicular to `axis`, rows of
    /// the next axis (cyclically) fastest, in DFT index order.
    pub fn spectrum_plane(&self, grid_n: usize, domain: &Aabb, axis: usize) -> Vec<f64> {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut out = Vec::with_capacity(grid_n * grid_n);
        for j in 0..grid_n {
            for i in 0..grid_n {
                let mut idx = [0; 3];
                idx[a] = i;
                idx[b] = j;
                let w = lattice_frequency(domain, grid_n, idx);
                let f: Complex64 = self.kernels.iter().map(|g| g.fourier_transform(&w) * g.alpha()).sum();
                out.push(f.norm_sqr());
            }
        }
        out
    }

    /// Smallest principal scale over all primitives.
    pub fn min_scale(&self) -> Option<f64> {
        self.primitives.iter().flat_map(|p| p.scale).reduce(f64::min)
    }
}

fn make_kernels(prims: &[Primitive]) -> Result<Vec<Kernel>, FieldError> {
    prims
        .iter()
        .enumerate()
        .map(|(index, p)| Kernel::new(*p).map_err(|source| FieldError::Primitive { index, source }))
        .collect()
}

fn quantized_bounds(kernels: &[Kernel]) -> Aabb {
    if kernels.is_empty() {
        return Aabb::new(Vec3::zeros(), Vec3::zeros());
    }
    let mut b = Aabb::EMPTY;
    for k in kernels {
        b.grow(&k.bounds(SIGMA_EXTENT));
    }
    // round outward so the stored box still encloses everything
    let down = |v: f64| {
        let f = v as f32;
        if (f as f64) > v { f.next_down() as f64 } else { f as f64 }
    };
    let up = |v: f64| {
        let f = v as f32;
        if (f as f64) < v { f.next_up() as f64 } else { f as f64 }
    };
    Aabb::new(b.min.map(down), b.max.map(up))
}
