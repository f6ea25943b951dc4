use serde::{Deserialize, Serialize};

use crate::geometry::{Ray, Vec3};

/// Pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "y_up")]
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    pub vfov: f64,
}

fn y_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

impl Default for Camera {
    fn default() -> Self {
        Camera { position: [0.0, 0.0, 4.0], look_at: [0.0; 3], up: y_up(), vfov: 40.0 }
    }
}

/// Precomputed camera basis for a given image size.
#[derive(Clone, Copy, Debug)]
pub struct CameraFrame {
    origin: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    tan_half: f64,
    width: usize,
    height: usize,
}

impl Camera {
    pub fn looking(position: Vec3, look_at: Vec3, vfov: f64) -> Camera {
        Camera { position: position.into(), look_at: look_at.into(), up: y_up(), vfov }
    }

    /// Basis for an image, or `None` when the view is degenerate.
    pub fn frame(&self, width: usize, height: usize) -> Option<CameraFrame> {
        let origin = Vec3::from(self.position);
        let forward = (Vec3::from(self.look_at) - origin).try_normalize(1e-12)?;
        let mut up = Vec3::from(self.up);
        if forward.cross(&up).norm() < 1e-9 {
            up = if forward.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
        }
        let right = forward.cross(&up).normalize();
        let up = right.cross(&forward);
        let tan_half = (self.vfov.to_radians() * 0.5).tan();
        if width == 0 || height == 0 || !(tan_half > 0.0) || !tan_half.is_finite() {
            return None;
        }
        Some(CameraFrame { origin, forward, right, up, tan_half, width, height })
    }
}

impl CameraFrame {
    /// Ray through image position `(x, y)` in pixels, `y` downwards.
    pub fn ray(&self, x: f64, y: f64) -> Ray {
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * x / self.width as f64 - 1.0) * self.tan_half * aspect;
        let sy = (1.0 - 2.0 * y / self.height as f64) * self.tan_half;
        Ray::new(self.origin, self.forward + self.right * sx + self.up * sy)
    }

    pub fn pixel_center(&self, px: usize, py: usize) -> Ray {
        self.ray(px as f64 + 0.5, py as f64 + 0.5)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    /// Projects a world point to pixel coordinates, if in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<[f64; 2]> {
        let d = p - self.origin;
        let z = d.dot(&self.forward);
        if z <= 0.0 {
            return None;
        }
        let aspect = self.width as f64 / self.height as f64;
        let sx = d.dot(&self.right) / z / (self.tan_half * aspect);
        let sy = d.dot(&self.up) / z / self.tan_half;
        Some([(sx + 1.0) * 0.5 * self.width as f64, (1.0 - sy) * 0.5 * self.height as f64])
    }
}
