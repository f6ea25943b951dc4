//! Training views and voxel reference images.

use crate::geometry::Vec3;
use crate::render::{CameraFrame, Camera};

use super::grid::VoxelGrid;

/// One training camera.
#[derive(Clone, Copy, Debug)]
pub struct View {
    pub camera: Camera,
    pub frame: CameraFrame,
    pub width: usize,
    pub height: usize,
}

impl View {
    pub fn new(camera: Camera, width: usize, height: usize) -> View {
        View { camera, frame: camera.frame(width, height).expect("valid view"), width, height }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// `count` cameras on a Fibonacci sphere of radius `distance`, looking at the origin.
pub fn fibonacci_views(count: usize, distance: f64, vfov: f64, res: usize) -> Vec<View> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - y * y).sqrt();
            let a = golden * i as f64;
            let p = Vec3::new(r * a.cos(), y, r * a.sin()) * distance;
            View::new(Camera::looking(p, Vec3::zeros(), vfov), res, res)
        })
        .collect()
}

/// Default view set for a grid over `[−1, 1]³`.
pub fn default_views(count: usize, res: usize) -> Vec<View> {
    fibonacci_views(count, 4.0, 50.0, res)
}

/// Transmittance through the voxel grid by midpoint ray marching.
///
/// `step_voxels` is the step in units of the smallest voxel size.
pub fn render_reference(g: &VoxelGrid, view: &View, step_voxels: f64) -> Vec<f64> {
    let h = g.voxel_size();
    let step = step_voxels * h.x.min(h.y).min(h.z);
    let mut out = Vec::with_capacity(view.pixels());
    for y in 0..view.height {
        for x in 0..view.width {
            let ray = view.frame.pixel_center(x, y);
            let inv = ray.dir.map(|v| 1.0 / v);
            let tau = match g.domain.intersect(&ray.origin, &inv, 0.0, f64::INFINITY) {
                None => 0.0,
                Some((t0, t1)) => {
                    let n = ((t1 - t0) / step).ceil().max(1.0) as usize;
                    let dt = (t1 - t0) / n as f64;
                    (0..n).map(|i| g.sample(&ray.at(t0 + (i as f64 + 0.5) * dt))).sum::<f64>() * dt
                }
            };
            out.push((-tau).exp());
        }
    }
    out
}
