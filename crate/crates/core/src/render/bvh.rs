//! Bounding volume hierarchy over clamped kernel ellipsoids.
//!
//! The hierarchy is a forest: one tree per `(level, bin)` group, so a ray
//! that cannot see a level or whose draw skipped a bin never touches the
//! corresponding nodes. Each node carries the OR of its members' level masks.

use crate::field::{Field, VisibilityMask};
use crate::geometry::{Aabb, Ray};
use crate::kernel::WhitenedRay;

use super::ExtentPolicy;

const LEAF_SIZE: usize = 4;
const SAH_BUCKETS: usize = 12;

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    mask: VisibilityMask,
    /// Leaf: first primitive slot; inner: index of the right child (left is `self + 1`).
    offset: u32,
    count: u32,
}

#[derive(Clone, Debug)]
pub struct Tree {
    pub level: usize,
    pub bin: usize,
    nodes: Vec<Node>,
}

impl Tree {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.count > 0).count()
    }
}

/// Counters collected during traversal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraversalStats {
    pub rays: u64,
    pub node_visits: u64,
    pub prim_tests: u64,
}

impl std::ops::AddAssign for TraversalStats {
    fn add_assign(&mut self, o: Self) {
        self.rays += o.rays;
        self.node_visits += o.node_visits;
        self.prim_tests += o.prim_tests;
    }
}

/// Per-ray primitive filter applied during traversal.
#[derive(Clone, Copy, Debug)]
pub struct Filter<'a> {
    /// Skip bins whose weight is zero.
    pub bin_weights: Option<&'a [f64]>,
    /// Skip Gabors whose peak frequency is at least this value.
    pub max_freq: f64,
    /// Explicit per-primitive keep flags.
    pub keep: Option<&'a [bool]>,
}

impl Default for Filter<'_> {
    fn default() -> Self {
        Filter { bin_weights: None, max_freq: f64::INFINITY, keep: None }
    }
}

/// One primitive crossing a ray.
#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub prim: u32,
    pub t0: f64,
    pub t1: f64,
    pub wr: WhitenedRay,
}

#[derive(Clone, Debug)]
pub struct Bvh {
    trees: Vec<Tree>,
    /// Primitive ids in leaf order.
    slots: Vec<u32>,
    extents: Vec<f64>,
    f0: Vec<f64>,
    gaussian: Vec<bool>,
    levels: Vec<u8>,
}

/// Whitened-sphere crossing of a ray, clipped to the ray range.
///
/// Solves `‖pW + s vW‖ = extent` with `s = jac·t`.
#[inline]
pub fn sphere_interval(wr: &WhitenedRay, extent: f64, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
    let disc = extent * extent - wr.perp2();
    if !(disc > 0.0) {
        return None;
    }
    let h = disc.sqrt();
    let t0 = ((-wr.b - h) / wr.jac).max(t_min);
    let t1 = ((-wr.b + h) / wr.jac).min(t_max);
    if t0 < t1 {
        Some((t0, t1))
    } else {
        None
    }
}

impl Bvh {
    pub fn build(field: &Field, policy: ExtentPolicy) -> Bvh {
        let kernels = field.kernels();
        let extents: Vec<f64> = kernels.iter().map(|k| policy.extent(k)).collect();
        let bins = field.bin_count();
        let mut groups: Vec<Vec<u32>> = vec![Vec::new(); field.level_count() * bins];
        for i in 0..field.len() {
            if extents[i] > 0.0 && field.primitives()[i].alpha > 0.0 {
                groups[field.level_of(i) * bins + field.bin_of(i)].push(i as u32);
            }
        }
        let boxes: Vec<Aabb> = kernels.iter().zip(&extents).map(|(k, &e)| k.bounds(e)).collect();
        let mut slots = Vec::new();
        let mut trees = Vec::new();
        for (g, mut ids) in groups.into_iter().enumerate() {
            if ids.is_empty() {
                continue;
            }
            let level = g / bins;
            let mut nodes = Vec::new();
            let base = slots.len();
            build_node(&mut nodes, &mut ids, &boxes, VisibilityMask::level(level), base);
            slots.extend(ids);
            trees.push(Tree { level, bin: g % bins, nodes });
        }
        Bvh {
            trees,
            slots,
            extents,
            f0: field.primitives().iter().map(|p| p.peak_frequency()).collect(),
            gaussian: field.primitives().iter().map(|p| p.is_gaussian()).collect(),
            levels: field.levels().to_vec(),
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn extent(&self, prim: usize) -> f64 {
        self.extents[prim]
    }

    /// Appends every primitive crossing `ray` to `out`, unsorted.
    pub fn intersect(&self, field: &Field, ray: &Ray, filter: &Filter, out: &mut Vec<Hit>, stats: &mut TraversalStats) {
        stats.rays += 1;
        let kernels = field.kernels();
        let inv = ray.dir.map(|v| 1.0 / v);
        let mut stack: Vec<usize> = Vec::with_capacity(64);
        for tree in &self.trees {
            if !ray.mask.has_level(tree.level) {
                continue;
            }
            if let Some(w) = filter.bin_weights {
                if w[tree.bin] == 0.0 {
                    continue;
                }
            }
            stack.clear();
            stack.push(0);
            while let Some(ni) = stack.pop() {
                let node = &tree.nodes[ni];
                stats.node_visits += 1;
                if !node.mask.intersects(ray.mask) {
                    continue;
                }
                if node.bounds.intersect(&ray.origin, &inv, ray.t_min, ray.t_max).is_none() {
                    continue;
                }
                if node.count == 0 {
                    stack.push(node.offset as usize);
                    stack.push(ni + 1);
                    continue;
                }
                let start = node.offset as usize;
                for &pid in &self.slots[start..start + node.count as usize] {
                    let p = pid as usize;
                    if !self.gaussian[p] && self.f0[p] >= filter.max_freq {
                        continue;
                    }
                    if let Some(keep) = filter.keep {
                        if !keep[p] {
                            continue;
                        }
                    }
                    stats.prim_tests += 1;
                    let Ok(wr) = kernels[p].whiten_parts(&ray.origin, &ray.dir) else { continue };
                    if let Some((t0, t1)) = sphere_interval(&wr, self.extents[p], ray.t_min, ray.t_max) {
                        out.push(Hit { prim: pid, t0, t1, wr });
                    }
                }
            }
        }
    }

    /// Reference intersection that tests every primitive.
    pub fn intersect_brute(&self, field: &Field, ray: &Ray, filter: &Filter, out: &mut Vec<Hit>) {
        for (p, k) in field.kernels().iter().enumerate() {
            let w_ok = filter.bin_weights.is_none_or(|w| w[field.bin_of(p)] != 0.0);
            let keep_ok = filter.keep.is_none_or(|k| k[p]);
            let f_ok = self.gaussian[p] || self.f0[p] < filter.max_freq;
            if !(ray.mask.has_level(self.levels[p] as usize) && w_ok && keep_ok && f_ok) {
                continue;
            }
            if self.extents[p] <= 0.0 || k.alpha() <= 0.0 {
                continue;
            }
            let Ok(wr) = k.whiten_parts(&ray.origin, &ray.dir) else { continue };
            if let Some((t0, t1)) = sphere_interval(&wr, self.extents[p], ray.t_min, ray.t_max) {
                out.push(Hit { prim: p as u32, t0, t1, wr });
            }
        }
    }
}

fn build_node(nodes: &mut Vec<Node>, ids: &mut [u32], boxes: &[Aabb], mask: VisibilityMask, base: usize) -> usize {
    let bounds = ids.iter().fold(Aabb::EMPTY, |b, &i| b.union(&boxes[i as usize]));
    let me = nodes.len();
    nodes.push(Node { bounds, mask, offset: base as u32, count: ids.len() as u32 });
    if ids.len() <= LEAF_SIZE {
        return me;
    }
    let centroid = |i: u32| boxes[i as usize].center();
    let cb = ids.iter().fold(Aabb::EMPTY, |b, &i| {
        let c = centroid(i);
        b.union(&Aabb::new(c, c))
    });
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
    if ext[axis] <= 0.0 {
        return me;
    }
    let bucket_of = |i: u32| {
        let f = (centroid(i)[axis] - cb.min[axis]) / ext[axis];
        ((f * SAH_BUCKETS as f64) as usize).min(SAH_BUCKETS - 1)
    };
    let mut counts = [0usize; SAH_BUCKETS];
    let mut bb = [Aabb::EMPTY; SAH_BUCKETS];
    for &i in ids.iter() {
        let b = bucket_of(i);
        counts[b] += 1;
        bb[b].grow(&boxes[i as usize]);
    }
    let mut best = (f64::INFINITY, SAH_BUCKETS / 2);
    for split in 1..SAH_BUCKETS {
        let (mut lb, mut rb) = (Aabb::EMPTY, Aabb::EMPTY);
        let (mut lc, mut rc) = (0, 0);
        for b in 0..split {
            lb.grow(&bb[b]);
            lc += counts[b];
        }
        for b in split..SAH_BUCKETS {
            rb.grow(&bb[b]);
            rc += counts[b];
        }
        if lc == 0 || rc == 0 {
            continue;
        }
        let cost = lb.surface_area() * lc as f64 + rb.surface_area() * rc as f64;
        if cost < best.0 {
            best = (cost, split);
        }
    }
    let mid = if best.0.is_finite() {
        let split = best.1;
        let mut k = 0;
        for j in 0..ids.len() {
            if bucket_of(ids[j]) < split {
                ids.swap(j, k);
                k += 1;
            }
        }
        k
    } else {
        ids.sort_by(|&a, &b| centroid(a)[axis].total_cmp(&centroid(b)[axis]));
        ids.len() / 2
    };
    let (left, right) = ids.split_at_mut(mid);
    nodes[me].count = 0;
    build_node(nodes, left, boxes, mask, base);
    let r = build_node(nodes, right, boxes, mask, base + mid);
    nodes[me].offset = r as u32;
    me
}

/// Bounds of every tree, for diagnostics.
pub fn tree_bounds(bvh: &Bvh) -> Vec<Aabb> {
    bvh.trees.iter().map(|t| t.nodes[0].bounds).collect()
}
