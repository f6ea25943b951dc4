//! Event-sourced editing sessions.
//!
//! A session is nothing but its edit log; the field and camera are derived
//! by replaying it, so a log copied into a fresh session reproduces the same
//! export byte for byte.

use std::sync::Arc;

use gabor_fields::field::gff;
use gabor_fields::procedural::{make_chunk, make_cloud_tree, ChunkParams, CloudTreeParams, ProceduralError};
use gabor_fields::render::Camera;
use gabor_fields::{Field, FieldError, KernelError, Primitive};
use serde::{Deserialize, Serialize};

/// Partial update of a primitive; absent fields are left unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitivePatch {
    pub mu: Option<[f64; 3]>,
    pub rot: Option<[f64; 4]>,
    pub scale: Option<[f64; 3]>,
    pub alpha: Option<f64>,
    pub omega: Option<f64>,
}

impl PrimitivePatch {
    pub fn apply(&self, p: &Primitive) -> Primitive {
        Primitive {
            mu: self.mu.unwrap_or(p.mu),
            rot: self.rot.unwrap_or(p.rot),
            scale: self.scale.unwrap_or(p.scale),
            alpha: self.alpha.unwrap_or(p.alpha),
            omega: self.omega.unwrap_or(p.omega),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    Chunk { params: ChunkParams },
    Tree { params: CloudTreeParams },
    Patch { pid: usize, patch: PrimitivePatch },
    Delete { pid: usize },
    Camera { camera: Camera },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Added(Vec<usize>),
    Patched(usize, Primitive),
    Deleted(usize),
    Camera(Camera),
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown primitive {0}")]
    UnknownPrimitive(usize),
    #[error(transparent)]
    Procedural(#[from] ProceduralError),
    #[error("invalid primitive: {0}")]
    Primitive(#[from] KernelError),
    #[error("invalid camera")]
    Camera,
    #[error("edit {index} of the log failed: {source}")]
    Replay { index: usize, source: Box<SessionError> },
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    log: Vec<Edit>,
    /// Primitive slots by id; deleted ids stay empty so ids never shift.
    slots: Vec<Option<Primitive>>,
    camera: Camera,
    cache: Option<Arc<Field>>,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        Session { id: id.into(), log: Vec::new(), slots: Vec::new(), camera: Camera::default(), cache: None }
    }

    pub fn replay(id: impl Into<String>, log: &[Edit]) -> Result<Self, SessionError> {
        let mut s = Session::new(id);
        for (index, e) in log.iter().enumerate() {
            s.apply(e.clone()).map_err(|e| SessionError::Replay { index, source: Box::new(e) })?;
        }
        Ok(s)
    }

    pub fn log(&self) -> &[Edit] {
        &self.log
    }

    pub fn camera(&self) -> Camera {
        self.camera
    }

    pub fn live_count(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn primitive(&self, pid: usize) -> Option<&Primitive> {
        self.slots.get(pid).and_then(|s| s.as_ref())
    }

    /// Validates and applies one edit; a rejected edit leaves the session untouched.
    pub fn apply(&mut self, edit: Edit) -> Result<Outcome, SessionError> {
        let outcome = match &edit {
            Edit::Chunk { params } => self.add(make_chunk(params)?),
            Edit::Tree { params } => self.add(make_cloud_tree(params)?),
            Edit::Patch { pid, patch } => {
                let old = self.primitive(*pid).ok_or(SessionError::UnknownPrimitive(*pid))?;
                let new = patch.apply(old);
                new.validate()?;
                self.slots[*pid] = Some(new);
                Outcome::Patched(*pid, new)
            }
            Edit::Delete { pid } => {
                self.primitive(*pid).ok_or(SessionError::UnknownPrimitive(*pid))?;
                self.slots[*pid] = None;
                Outcome::Deleted(*pid)
            }
            Edit::Camera { camera } => {
                camera.frame(16, 16).ok_or(SessionError::Camera)?;
                self.camera = *camera;
                Outcome::Camera(*camera)
            }
        };
        if !matches!(edit, Edit::Camera { .. }) {
            self.cache = None;
        }
        self.log.push(edit);
        Ok(outcome)
    }

    fn add(&mut self, prims: Vec<Primitive>) -> Outcome {
        let start = self.slots.len();
        self.slots.extend(prims.into_iter().map(Some));
        Outcome::Added((start..self.slots.len()).collect())
    }

    /// The field of the live primitives in id order.
    pub fn field(&mut self) -> Result<Arc<Field>, SessionError> {
        if let Some(f) = &self.cache {
            return Ok(f.clone());
        }
        let prims: Vec<Primitive> = self.slots.iter().flatten().copied().collect();
        let f = Arc::new(Field::with_defaults(&prims)?);
        self.cache = Some(f.clone());
        Ok(f)
    }

    pub fn export(&mut self) -> Result<Vec<u8>, SessionError> {
        Ok(gff::serialize(self.field()?.as_ref()))
    }
}
