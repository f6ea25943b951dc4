//! Procedural clouds: Gaussian cores decorated with surface Gabors, grown
//! into fractal trees of chunks and scattered into scenes.

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{Field, FieldError};
use crate::geometry::Vec3;
use crate::kernel::Primitive;
use crate::sampling::mix;

/// Deepest tree we are willing to grow.
pub const MAX_DEPTH: usize = 4;

/// Radial jitter of surface Gabors as a fraction of the chunk radius.
pub const SHELL_JITTER: f64 = 0.2;

/// Norm of a 3D normal vector with per-axis deviation `a`, from three
/// uniforms in `[0, 1)`.
///
/// `−2 ln(1 − u1)` is the squared radius of a Box–Muller pair; the third
/// component comes from a second pair.
pub fn maxwell_sample(a: f64, u1: f64, u2: f64, u3: f64) -> f64 {
    let r2 = -2.0 * (1.0 - u1).ln();
    let n3 = (-2.0 * (1.0 - u2).ln()).sqrt() * (std::f64::consts::TAU * u3).cos();
    a * (r2 + n3 * n3).sqrt()
}

pub fn maxwell_mean(a: f64) -> f64 {
    2.0 * a * (2.0 / std::f64::consts::PI).sqrt()
}

fn maxwell<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    maxwell_sample(a, rng.random(), rng.random(), rng.random())
}

fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let c: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    UnitQuaternion::from_quaternion(Quaternion::new(c[0], c[1], c[2], c[3]))
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ProceduralError {
    #[error("invalid chunk: {0}")]
    Chunk(String),
    #[error("tree depth {0} exceeds the cap of {MAX_DEPTH}")]
    Depth(usize),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkParams {
    pub center: [f64; 3],
    pub radius: f64,
    /// Cells per spherical axis of the surface grid.
    pub surface_grid_n: usize,
    pub omega_range: [f64; 2],
    /// Per-axis deviation of the Maxwell scale distribution.
    pub maxwell_a: f64,
    pub gabor_alpha: f64,
    pub core_alpha: f64,
    pub seed: u64,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams {
            center: [0.0; 3],
            radius: 0.5,
            surface_grid_n: 6,
            omega_range: [0.8, 1.6],
            maxwell_a: 0.04,
            gabor_alpha: 0.004,
            core_alpha: 0.8,
            seed: 0,
        }
    }
}

impl ChunkParams {
    pub fn validate(&self) -> Result<(), ProceduralError> {
        let bad = |m: String| Err(ProceduralError::Chunk(m));
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if self.surface_grid_n == 0 {
            return bad("surface_grid_n must be at least 1".into());
        }
        let [lo, hi] = self.omega_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("omega_range [{lo}, {hi}] is not an ordered nonnegative pair"));
        }
        if !(self.maxwell_a > 0.0 && self.maxwell_a.is_finite()) {
            return bad(format!("maxwell_a must be positive, got {}", self.maxwell_a));
        }
        if !(self.gabor_alpha >= 0.0 && self.core_alpha >= 0.0) {
            return bad("alphas must be nonnegative".into());
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return bad("center must be finite".into());
        }
        Ok(())
    }

    /// Surface cells: `n` latitude bands of `n` cells with each polar band merged into one.
    pub fn cell_count(&self) -> usize {
        surface_cells(self.surface_grid_n)
    }
}

pub fn surface_cells(n: usize) -> usize {
    match n {
        0 => 0,
        1 => 1,
        _ => 2 + (n - 2) * n,
    }
}

/// Ranges `(z_lo, z_hi, phi_lo, phi_hi)` of every surface cell.
fn cells(n: usize) -> Vec<(f64, f64, f64, f64)> {
    use std::f64::consts::{PI, TAU};
    if n == 1 {
        return vec![(-1.0, 1.0, 0.0, TAU)];
    }
    let band = |i: usize| ((PI * i as f64 / n as f64).cos(), (PI * (i + 1) as f64 / n as f64).cos());
    let mut out = Vec::with_capacity(surface_cells(n));
    let (z0, z1) = band(0);
    out.push((z1, z0, 0.0, TAU));
    for i in 1..n - 1 {
        let (z0, z1) = band(i);
        for j in 0..n {
            out.push((z1, z0, TAU * j as f64 / n as f64, TAU * (j + 1) as f64 / n as f64));
        }
    }
    let (z0, z1) = band(n - 1);
    out.push((z1, z0, 0.0, TAU));
    out
}

/// One Gaussian core plus one Gabor per surface cell.
pub fn make_chunk(p: &ChunkParams) -> Result<Vec<Primitive>, ProceduralError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(p.seed));
    let c = Vec3::from(p.center);
    let mut out = Vec::with_capacity(1 + p.cell_count());
    out.push(Primitive::gaussian(c, Vec3::repeat(p.radius / 3.0), p.core_alpha));
    let floor = 1e-3 * p.maxwell_a;
    for (z0, z1, f0, f1) in cells(p.surface_grid_n) {
        // area-uniform within the cell
        let z: f64 = rng.random_range(z0..=z1);
        let phi: f64 = rng.random_range(f0..=f1);
        let r = (1.0 - z * z).max(0.0).sqrt();
        let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z);
        let shell = p.radius * (1.0 + rng.random_range(-SHELL_JITTER..=SHELL_JITTER));
        let scale = Vec3::from_fn(|_, _| maxwell(p.maxwell_a, &mut rng).max(floor));
        let omega = rng.random_range(p.omega_range[0]..=p.omega_range[1]);
        let rot = uniform_rotation(&mut rng);
        out.push(Primitive::gabor(c + dir * shell, rot, scale, p.gabor_alpha, omega));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudTreeParams {
    pub root: ChunkParams,
    pub depth: usize,
    pub children_per_node: usize,
    pub child_radius_maxwell_a: f64,
    /// Attenuation per level of the child radius, surface scales and weights.
    pub decay: f64,
}

impl Default for CloudTreeParams {
    fn default() -> Self {
        CloudTreeParams { root: ChunkParams::default(), depth: 2, children_per_node: 3, child_radius_maxwell_a: 0.15, decay: 0.5 }
    }
}

impl CloudTreeParams {
    pub fn validate(&self) -> Result<(), ProceduralError> {
        self.root.validate()?;
        if self.depth > MAX_DEPTH {
            return Err(ProceduralError::Depth(self.depth));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(ProceduralError::Chunk(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.child_radius_maxwell_a > 0.0 && self.child_radius_maxwell_a.is_finite()) {
            return Err(ProceduralError::Chunk("child_radius_maxwell_a must be positive".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        (0..=self.depth).map(|l| self.children_per_node.pow(l as u32)).sum()
    }

    pub fn primitive_count(&self) -> usize {
        self.node_count() * (1 + self.root.cell_count())
    }
}

/// Grows the chunk tree breadth-first; children sit on their parent's sphere.
pub fn make_cloud_tree(p: &CloudTreeParams) -> Result<Vec<Primitive>, ProceduralError> {
    p.validate()?;
    let mut out = Vec::with_capacity(p.primitive_count());
    let mut rng = ChaCha8Rng::seed_from_u64(mix(p.root.seed ^ 0x7EE5));
    let mut level = vec![p.root];
    let mut node = 0u64;
    for l in 0..=p.depth {
        let mut next = Vec::new();
        for chunk in &level {
            out.extend(make_chunk(chunk)?);
            if l == p.depth {
                continue;
            }
            let f = p.decay.powi(l as i32 + 1);
            for _ in 0..p.children_per_node {
                node += 1;
                let radius = maxwell(p.child_radius_maxwell_a * p.decay.powi(l as i32), &mut rng)
                    .max(1e-3 * p.root.radius);
                let center = Vec3::from(chunk.center) + unit_vector(&mut rng) * chunk.radius;
                next.push(ChunkParams {
                    center: center.into(),
                    radius,
                    maxwell_a: p.root.maxwell_a * f,
                    gabor_alpha: p.root.gabor_alpha * f,
                    core_alpha: p.root.core_alpha * f,
                    seed: mix(p.root.seed.wrapping_add(node)),
                    ..*chunk
                });
            }
        }
        level = next;
    }
    Ok(out)
}

/// Distance-based level of detail: clouds beyond `gaussian_beyond` from the
/// viewer keep only their Gaussian cores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub clouds: Vec<CloudTreeParams>,
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
    pub count: usize,
    pub viewer: [f64; 3],
    pub gaussian_beyond: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            clouds: vec![CloudTreeParams::default()],
            box_min: [-3.0, -0.5, -3.0],
            box_max: [3.0, 0.5, 3.0],
            count: 4,
            viewer: [0.0, 0.0, 6.0],
            gaussian_beyond: f64::INFINITY,
            seed: 0,
        }
    }
}

/// Where each cloud of a scene went.
#[derive(Clone, Debug, PartialEq)]
pub struct Placement {
    pub template: usize,
    pub offset: Vec3,
    pub gaussian_only: bool,
    pub primitives: usize,
}

/// Places `count` clouds, cycling through the templates.
pub fn scatter_scene(p: &SceneParams) -> Result<(Field, Vec<Placement>), ProceduralError> {
    if p.clouds.is_empty() && p.count > 0 {
        return Err(ProceduralError::Scene("no cloud templates".into()));
    }
    if (0..3).any(|a| !(p.box_min[a] <= p.box_max[a])) {
        return Err(ProceduralError::Scene("placement box is inverted".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(p.seed));
    let slots: Vec<(usize, Vec3)> = (0..p.count)
        .map(|i| {
            let o = Vec3::from_fn(|a, _| {
                if p.box_min[a] == p.box_max[a] { p.box_min[a] } else { rng.random_range(p.box_min[a]..p.box_max[a]) }
            });
            (i % p.clouds.len(), o)
        })
        .collect();
    let viewer = Vec3::from(p.viewer);
    let parts: Vec<(Placement, Vec<Primitive>)> = slots
        .par_iter()
        .enumerate()
        .map(|(i, &(t, offset))| {
            let mut tree = p.clouds[t];
            tree.root.seed = mix(tree.root.seed ^ mix(p.seed.wrapping_add(i as u64)));
            let far = (offset + Vec3::from(tree.root.center) - viewer).norm() > p.gaussian_beyond;
            let prims: Vec<Primitive> = make_cloud_tree(&tree)?
                .into_iter()
                .filter(|q| !far || q.is_gaussian())
                .map(|mut q| {
                    q.mu = (Vec3::from(q.mu) + offset).into();
                    q
                })
                .collect();
            Ok((Placement { template: t, offset, gaussian_only: far, primitives: prims.len() }, prims))
        })
        .collect::<Result<_, ProceduralError>>()?;
    let mut all = Vec::new();
    let mut placements = Vec::new();
    for (pl, prims) in parts {
        all.extend(prims);
        placements.push(pl);
    }
    Ok((Field::with_defaults(&all)?, placements))
}

/// A generation request: loose chunks, trees, and an optional scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSpec {
    pub chunks: Vec<ChunkParams>,
    pub trees: Vec<CloudTreeParams>,
    pub scene: Option<SceneParams>,
}

impl GenerationSpec {
    pub fn from_toml(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn primitives(&self) -> Result<Vec<Primitive>, ProceduralError> {
        let mut out = Vec::new();
        for c in &self.chunks {
            out.extend(make_chunk(c)?);
        }
        for t in &self.trees {
            out.extend(make_cloud_tree(t)?);
        }
        if let Some(s) = &self.scene {
            out.extend_from_slice(scatter_scene(s)?.0.primitives());
        }
        Ok(out)
    }

    pub fn build(&self) -> Result<Field, ProceduralError> {
        Ok(Field::with_defaults(&self.primitives()?)?)
    }
}

/// The bundled demonstration cloud: one depth-2 tree around the origin.
pub fn bundled_cloud() -> Field {
    let tree = CloudTreeParams { root: ChunkParams { seed: 7, ..Default::default() }, ..Default::default() };
    Field::with_defaults(&make_cloud_tree(&tree).expect("bundled parameters are valid"))
        .expect("bundled cloud is a valid field")
}
