//! The GFF binary container.
//!
//! Layout, all little-endian:
//!
//! | bytes      | content                                            |
//! |------------|----------------------------------------------------|
//! | 4          | magic `GFF1`                                       |
//! | 4          | `u32` version (1)                                  |
//! | 4          | `u32` primitive count `N`                          |
//! | 1, 1       | `u8` level count `L`, `u8` bin count `K`           |
//! | 24         | `6 × f32` bounds (min xyz, max xyz)                |
//! | 4L         | `L × f32` level cutoffs                            |
//! | 12K        | `K × 3 × f32` bin axes                             |
//! | 48N        | records: mu\[3\], quat\[4\] (w x y z), scale\[3\], alpha, omega |
//! | N, N       | `u8` levels, `u8` bins                             |

use thiserror::Error;

use super::{Field, FieldError};
use crate::geometry::{Aabb, Vec3};
use crate::kernel::Primitive;

pub const MAGIC: &[u8; 4] = b"GFF1";
pub const VERSION: u32 = 1;
pub const RECORD_BYTES: usize = 48;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GffError {
    #[error("bad magic at byte 0")]
    Magic,
    #[error("unsupported version {found} at byte 4")]
    Version { found: u32 },
    #[error("truncated file: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("non-finite value at byte {offset}")]
    NonFinite { offset: usize },
    #[error("{extra} trailing bytes at offset {offset}")]
    Trailing { offset: usize, extra: usize },
    #[error("invalid field at byte {offset}: {source}")]
    Invalid { offset: usize, source: FieldError },
}

/// Header size for a field with `levels` levels and `bins` bins.
pub fn header_bytes(levels: usize, bins: usize) -> usize {
    4 + 4 + 4 + 2 + 24 + 4 * levels + 12 * bins
}

/// Total file size for `n` primitives.
pub fn file_bytes(n: usize, levels: usize, bins: usize) -> usize {
    header_bytes(levels, bins) + n * (RECORD_BYTES + 2)
}

pub fn serialize(field: &Field) -> Vec<u8> {
    let n = field.len();
    let mut out = Vec::with_capacity(file_bytes(n, field.level_count(), field.bin_count()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.push(field.level_count() as u8);
    out.push(field.bin_count() as u8);
    let put = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    let b = field.bounds();
    for v in b.min.iter().chain(b.max.iter()) {
        put(&mut out, *v);
    }
    for &c in field.cutoffs() {
        put(&mut out, c);
    }
    for a in field.bin_axes() {
        for v in a.iter() {
            put(&mut out, *v);
        }
    }
    for p in field.primitives() {
        for v in p.mu.iter().chain(&p.rot).chain(&p.scale).chain([&p.alpha, &p.omega]) {
            put(&mut out, *v);
        }
    }
    out.extend_from_slice(field.levels());
    out.extend_from_slice(field.bins());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GffError> {
        if self.bytes.len() - self.pos < n {
            return Err(GffError::Truncated { offset: self.pos, needed: n });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, GffError> {
        Ok(self.take(1)?[0])
    }

    fn f32(&mut self) -> Result<f64, GffError> {
        let offset = self.pos;
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(GffError::NonFinite { offset });
        }
        Ok(v as f64)
    }

    fn vec3(&mut self) -> Result<Vec3, GffError> {
        Ok(Vec3::new(self.f32()?, self.f32()?, self.f32()?))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<Field, GffError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| GffError::Magic)? != MAGIC {
        return Err(GffError::Magic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(GffError::Version { found: version });
    }
    let n = r.u32()? as usize;
    let levels = r.u8()? as usize;
    let bins = r.u8()? as usize;
    let min = r.vec3()?;
    let max = r.vec3()?;
    let cutoffs_at = r.pos;
    let cutoffs = (0..levels).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
    let bin_axes = (0..bins).map(|_| r.vec3()).collect::<Result<Vec<_>, _>>()?;
    // check the whole payload length up front so a bogus count fails fast
    let needed = n.saturating_mul(RECORD_BYTES + 2);
    if bytes.len() - r.pos < needed {
        return Err(GffError::Truncated { offset: r.pos, needed });
    }
    let mut primitives = Vec::with_capacity(n);
    for _ in 0..n {
        let start = r.pos;
        let mut v = [0.0; 12];
        for x in v.iter_mut() {
            *x = r.f32()?;
        }
        let p = Primitive {
            mu: [v[0], v[1], v[2]],
            rot: [v[3], v[4], v[5], v[6]],
            scale: [v[7], v[8], v[9]],
            alpha: v[10],
            omega: v[11],
        };
        p.validate().map_err(|e| GffError::Invalid {
            offset: start,
            source: FieldError::Primitive { index: primitives.len(), source: e },
        })?;
        primitives.push(p);
    }
    let level_of = r.take(n)?.to_vec();
    let bin_of = r.take(n)?.to_vec();
    if r.pos != bytes.len() {
        return Err(GffError::Trailing { offset: r.pos, extra: bytes.len() - r.pos });
    }
    Field::from_parts(primitives, level_of, bin_of, cutoffs, bin_axes, Aabb::new(min, max))
        .map_err(|source| GffError::Invalid { offset: cutoffs_at, source })
}

pub fn write_file(path: impl AsRef<std::path::Path>, field: &Field) -> std::io::Result<()> {
    std::fs::write(path, serialize(field))
}

#[derive(Debug, Error)]
pub enum GffFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] GffError),
}

pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<Field, GffFileError> {
    Ok(deserialize(&std::fs::read(path)?)?)
}
