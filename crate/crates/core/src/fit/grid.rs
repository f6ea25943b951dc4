//! Dense voxel grids, their file format and the blur pyramid.

use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

pub const VGRID_MAGIC: &[u8; 4] = b"VGRD";
pub const VGRID_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("bad magic")]
    Magic,
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated grid: expected {expected} bytes, found {found}")]
    Size { expected: usize, found: usize },
    #[error("invalid density {value} at voxel {index}")]
    Density { index: usize, value: f64 },
    #[error("invalid domain box")]
    Domain,
    #[error("{0}")]
    Io(String),
}

/// Scalar densities on a regular grid, `x` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
    pub domain: Aabb,
}

impl VoxelGrid {
    pub fn zeros(dims: [usize; 3], domain: Aabb) -> VoxelGrid {
        VoxelGrid { dims, data: vec![0.0; dims[0] * dims[1] * dims[2]], domain }
    }

    pub fn n_max(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(0)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    pub fn voxel_size(&self) -> Vec3 {
        let e = self.domain.extent();
        Vec3::new(e.x / self.dims[0] as f64, e.y / self.dims[1] as f64, e.z / self.dims[2] as f64)
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.voxel_size();
        self.domain.min + Vec3::new((i as f64 + 0.5) * h.x, (j as f64 + 0.5) * h.y, (k as f64 + 0.5) * h.z)
    }

    /// Sum of voxel values.
    pub fn mass(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Trilinear interpolation between voxel centers, zero outside the grid.
    pub fn sample(&self, p: &Vec3) -> f64 {
        let h = self.voxel_size();
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let g = (p[a] - self.domain.min[a]) / h[a] - 0.5;
            let f = g.floor();
            base[a] = f as i64;
            frac[a] = g - f;
        }
        let get = |i: i64, j: i64, k: i64| {
            if i < 0 || j < 0 || k < 0 || i >= self.dims[0] as i64 || j >= self.dims[1] as i64 || k >= self.dims[2] as i64 {
                0.0
            } else {
                self.at(i as usize, j as usize, k as usize)
            }
        };
        let mut acc = 0.0;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                    let w = wx * wy * wz;
                    if w != 0.0 {
                        acc += w * get(base[0] + dx, base[1] + dy, base[2] + dz);
                    }
                }
            }
        }
        acc
    }

    /// Zero-pads to a cube of side `n_max` and maps it onto `[−1, 1]³`.
    pub fn pad_to_cube(&self) -> VoxelGrid {
        let n = self.n_max();
        let mut out = VoxelGrid::zeros([n; 3], Aabb::cube(1.0));
        let off = [0, 1, 2].map(|a| (n - self.dims[a]) / 2);
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let d = out.index(i + off[0], j + off[1], k + off[2]);
                    out.data[d] = self.at(i, j, k);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.domain.is_empty() || (0..3).any(|a| !(self.domain.extent()[a] > 0.0)) {
            return Err(GridError::Domain);
        }
        for (index, &value) in self.data.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(GridError::Density { index, value });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(44 + 4 * self.data.len());
        out.extend_from_slice(VGRID_MAGIC);
        out.extend_from_slice(&VGRID_VERSION.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.domain.min.iter().chain(self.domain.max.iter()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<VoxelGrid, GridError> {
        if b.len() < 44 {
            return Err(GridError::Size { expected: 44, found: b.len() });
        }
        if &b[..4] != VGRID_MAGIC {
            return Err(GridError::Magic);
        }
        let u = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f = |o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as f64;
        if u(4) != VGRID_VERSION {
            return Err(GridError::Version(u(4)));
        }
        let dims = [u(8) as usize, u(12) as usize, u(16) as usize];
        let domain = Aabb::new(Vec3::new(f(20), f(24), f(28)), Vec3::new(f(32), f(36), f(40)));
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(GridError::Domain)?;
        let expected = 44 + 4 * n;
        if b.len() != expected {
            return Err(GridError::Size { expected, found: b.len() });
        }
        let data = (0..n).map(|i| f(44 + 4 * i)).collect();
        let g = VoxelGrid { dims, data, domain };
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<VoxelGrid, GridError> {
        let b = std::fs::read(path).map_err(|e| GridError::Io(e.to_string()))?;
        VoxelGrid::from_bytes(&b)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), GridError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| GridError::Io(e.to_string()))
    }
}

/// Standard deviation in voxels of pyramid level `level`.
pub fn level_sigma_voxels(sigma0: f64, level: usize, n_max: usize) -> f64 {
    sigma0 * (1u64 << level) as f64 * n_max as f64
}

/// Normalized, 4σ-truncated sampled Gaussian taps `w[−r..=r]`.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma < 1e-6 {
        return vec![1.0];
    }
    let r = (4.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-r..=r).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable blur that conserves mass: each voxel spreads over the
/// in-bounds taps, renormalized at the boundary.
pub fn blur(g: &VoxelGrid, sigma_vox: f64) -> VoxelGrid {
    let taps = gaussian_taps(sigma_vox);
    if taps.len() == 1 {
        return g.clone();
    }
    let r = (taps.len() / 2) as i64;
    let mut cur = g.clone();
    for axis in 0..3 {
        let n = g.dims[axis] as i64;
        let mut out = VoxelGrid::zeros(g.dims, g.domain);
        let stride = match axis {
            0 => 1,
            1 => g.dims[0],
            _ => g.dims[0] * g.dims[1],
        };
        for (idx, &v) in cur.data.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let pos = ((idx / stride) % g.dims[axis]) as i64;
            let lo = (pos - r).max(0);
            let hi = (pos + r).min(n - 1);
            let norm: f64 = (lo..=hi).map(|q| taps[(q - pos + r) as usize]).sum();
            for q in lo..=hi {
                let t = (idx as i64 + (q - pos) * stride as i64) as usize;
                out.data[t] += v * taps[(q - pos + r) as usize] / norm;
            }
        }
        cur = out;
    }
    cur
}

/// Blur pyramid: level `l` uses `σ_vox = σ0 · 2^l · N_max`.
pub fn gaussian_pyramid(g: &VoxelGrid, sigma0: f64, levels: usize) -> Vec<VoxelGrid> {
    (0..levels).map(|l| blur(g, level_sigma_voxels(sigma0, l, g.n_max()))).collect()
}

/// Sum of anisotropic Gaussian blobs on an `n³` grid over `[−1, 1]³`.
///
/// Each blob is `(center, sigma, peak)`.
pub fn blob_grid(n: usize, blobs: &[([f64; 3], [f64; 3], f64)]) -> VoxelGrid {
    let mut g = VoxelGrid::zeros([n; 3], Aabb::cube(1.0));
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let p = g.voxel_center(i, j, k);
                let v: f64 = blobs
                    .iter()
                    .map(|(c, s, a)| {
                        let q = (0..3).map(|d| ((p[d] - c[d]) / s[d]).powi(2)).sum::<f64>();
                        a * (-0.5 * q).exp()
                    })
                    .sum();
                let idx = g.index(i, j, k);
                g.data[idx] = v;
            }
        }
    }
    g
}

/// The bundled fit fixture: a few overlapping blobs with some fine detail.
pub fn fixture_blob(n: usize) -> VoxelGrid {
    blob_grid(
        n,
        &[
            ([0.0, 0.0, 0.0], [0.35, 0.25, 0.3], 3.0),
            ([0.3, 0.2, -0.1], [0.15, 0.2, 0.12], 2.5),
            ([-0.3, -0.15, 0.2], [0.18, 0.12, 0.2], 2.0),
            ([0.05, -0.3, -0.25], [0.08, 0.08, 0.1], 4.0),
            ([-0.1, 0.32, 0.15], [0.06, 0.1, 0.06], 4.0),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgrid_roundtrip() {
        let g = fixture_blob(8);
        let back = VoxelGrid::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), g.to_bytes());
        let z = VoxelGrid::zeros([2; 3], Aabb::cube(1.0));
        assert_eq!(VoxelGrid::from_bytes(&z.to_bytes()).unwrap().mass(), 0.0);
    }

    #[test]
    fn rejects_negative() {
        let mut g = VoxelGrid::zeros([2; 3], Aabb::cube(1.0));
        g.data[3] = -1.0;
        assert!(matches!(VoxelGrid::from_bytes(&g.to_bytes()), Err(GridError::Density { index: 3, .. })));
    }

    #[test]
    fn sigma_arithmetic() {
        let s = level_sigma_voxels(1.0 / (120.0 * std::f64::consts::PI), 0, 300);
        assert!((s - 0.7958).abs() < 1e-4);
    }

    #[test]
    fn tiny_sigma_is_identity() {
        let g = fixture_blob(6);
        assert_eq!(gaussian_pyramid(&g, 1e-12, 1)[0], g);
    }
}
