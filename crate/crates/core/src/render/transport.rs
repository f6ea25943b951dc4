//! Segment sweeps, optical depth, transmittance and free-flight sampling.

use serde::{Deserialize, Serialize};

use crate::field::Field;
use crate::geometry::Ray;
use crate::kernel::{DEFAULT_MIDPOINT_THRESHOLD, MAX_SERIES_TERMS};

use super::bvh::Hit;

/// Lower clamp on optical depth before exponentiation.
pub const TAU_FLOOR: f64 = -0.1;
/// Convergence target of the in-segment bisection, in optical depth.
pub const BISECTION_TOL: f64 = 1e-7;
pub const BISECTION_MAX_ITERS: usize = 60;

/// How a segment integral is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Integrator {
    Exact,
    Fast { terms: usize, midpoint: f64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::Exact
    }
}

impl Integrator {
    pub fn fast() -> Self {
        Integrator::Fast { terms: MAX_SERIES_TERMS, midpoint: DEFAULT_MIDPOINT_THRESHOLD }
    }

    /// Unit-weight integral of the hit's kernel over `[t0, t1]`.
    #[inline]
    pub fn integrate(&self, field: &Field, ray: &Ray, hit: &Hit, t0: f64, t1: f64) -> f64 {
        let k = &field.kernels()[hit.prim as usize];
        match *self {
            Integrator::Exact => k.integral_segment_whitened(&hit.wr, t0, t1),
            Integrator::Fast { terms, midpoint } => {
                k.integral_segment_fast_whitened(&hit.wr, ray, t0, t1, terms, midpoint)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Enter,
    Exit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentEvent {
    pub t: f64,
    pub prim_id: u32,
    pub kind: EventKind,
}

/// An interval of the ray with a constant set of overlapping primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    /// Indices into the hit list, ascending (and so ascending in primitive id).
    pub active: Vec<u32>,
}

/// Sorts hits into canonical order (by primitive id).
pub fn canonicalize(hits: &mut [Hit]) {
    hits.sort_unstable_by_key(|h| h.prim);
}

/// Entry and exit events of canonical hits, sorted by `t`, then primitive
/// id, enter before exit.
pub fn events(hits: &[Hit]) -> Vec<SegmentEvent> {
    let mut ev = Vec::with_capacity(hits.len() * 2);
    for h in hits {
        ev.push(SegmentEvent { t: h.t0, prim_id: h.prim, kind: EventKind::Enter });
        ev.push(SegmentEvent { t: h.t1, prim_id: h.prim, kind: EventKind::Exit });
    }
    ev.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.prim_id.cmp(&b.prim_id)).then(a.kind.cmp(&b.kind)));
    ev
}

/// Partitions the ray by the event sweep. Hits must be canonical.
pub fn collect_segments(hits: &[Hit]) -> Vec<Segment> {
    let ev = events(hits);
    let index_of = |pid: u32| hits.binary_search_by_key(&pid, |h| h.prim).expect("hit list is canonical") as u32;
    let mut active: Vec<u32> = Vec::new();
    let mut segs = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    let mut i = 0;
    while i < ev.len() {
        let t = ev[i].t;
        if !active.is_empty() && t > last_t {
            segs.push(Segment { t0: last_t, t1: t, active: active.clone() });
        }
        while i < ev.len() && ev[i].t == t {
            let h = index_of(ev[i].prim_id);
            match ev[i].kind {
                EventKind::Enter => {
                    let pos = active.binary_search(&h).unwrap_err();
                    active.insert(pos, h);
                }
                EventKind::Exit => {
                    if let Ok(pos) = active.binary_search(&h) {
                        active.remove(pos);
                    }
                }
            }
            i += 1;
        }
        last_t = t;
    }
    segs
}

/// `Σ wᵢ ∫ gᵢ` over each hit's full clipped interval, in canonical order.
pub fn optical_depth_hits(field: &Field, ray: &Ray, hits: &[Hit], weights: &[f64], integrator: Integrator) -> f64 {
    let mut tau = 0.0;
    for (h, &w) in hits.iter().zip(weights) {
        if w != 0.0 {
            tau += w * integrator.integrate(field, ray, h, h.t0, h.t1);
        }
    }
    tau
}

/// Optical depth summed segment by segment.
pub fn optical_depth(field: &Field, ray: &Ray, hits: &[Hit], weights: &[f64], segs: &[Segment], integrator: Integrator) -> f64 {
    segs.iter().map(|s| segment_tau(field, ray, hits, weights, s, s.t1, integrator)).sum()
}

#[inline]
fn segment_tau(field: &Field, ray: &Ray, hits: &[Hit], weights: &[f64], s: &Segment, t: f64, integrator: Integrator) -> f64 {
    let mut acc = 0.0;
    for &a in &s.active {
        let w = weights[a as usize];
        if w != 0.0 {
            acc += w * integrator.integrate(field, ray, &hits[a as usize], s.t0, t);
        }
    }
    acc
}

/// `exp(−max(τ, τ_floor))`.
#[inline]
pub fn transmittance(tau: f64) -> f64 {
    (-tau.max(TAU_FLOOR)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMethod {
    #[default]
    Bisection,
    /// Uniform position inside the bracketing segment.
    UniformInSegment,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceSample {
    pub t: f64,
    /// Clamped cumulative optical depth up to `t`.
    pub tau: f64,
    pub iterations: usize,
}

/// Free-flight distance with `τ(t) = −ln(1 − ξ)`, or `None` when the ray escapes.
///
/// The running optical depth is clamped monotone so that negative lobes
/// cannot make the inversion ambiguous.
#[allow(clippy::too_many_arguments)]
pub fn sample_distance(
    field: &Field,
    ray: &Ray,
    hits: &[Hit],
    weights: &[f64],
    segs: &[Segment],
    xi: f64,
    integrator: Integrator,
    method: DistanceMethod,
    u_fallback: f64,
) -> Option<DistanceSample> {
    let target = -(1.0 - xi).ln();
    let mut running = 0.0;
    let mut clamped: f64 = 0.0;
    for s in segs {
        if target <= clamped {
            return Some(DistanceSample { t: s.t0, tau: clamped, iterations: 0 });
        }
        let tau_s = segment_tau(field, ray, hits, weights, s, s.t1, integrator);
        let next = running + tau_s;
        if next < target {
            running = next;
            clamped = clamped.max(next);
            continue;
        }
        let (mut lo, mut hi) = (s.t0, s.t1);
        let mut iterations = 0;
        if method == DistanceMethod::UniformInSegment {
            let t = lo + u_fallback * (hi - lo);
            return Some(DistanceSample { t, tau: target, iterations });
        }
        // f(lo) < 0 <= f(hi)
        let mut t = 0.5 * (lo + hi);
        while iterations < BISECTION_MAX_ITERS {
            iterations += 1;
            t = 0.5 * (lo + hi);
            let f = running + segment_tau(field, ray, hits, weights, s, t, integrator) - target;
            if f.abs() < BISECTION_TOL {
                break;
            }
            if f < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
        }
        return Some(DistanceSample { t, tau: target, iterations });
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transmittance_values() {
        assert_eq!(transmittance(0.0), 1.0);
        assert!((transmittance(1.0) - (-1.0f64).exp()).abs() < 1e-16);
        assert!((transmittance(-5.0) - 0.1f64.exp()).abs() < 1e-16);
    }

    #[test]
    fn event_order() {
        use crate::geometry::Vec3;
        use crate::kernel::Primitive;
        let k = Primitive::gaussian(Vec3::zeros(), Vec3::repeat(1.0), 1.0).kernel().unwrap();
        let wr = k.whiten(&Ray::new(Vec3::zeros(), Vec3::x())).unwrap();
        let hits = [Hit { prim: 0, t0: 0.0, t1: 1.0, wr }, Hit { prim: 1, t0: 1.0, t1: 2.0, wr }];
        let ev = events(&hits);
        assert_eq!((ev[1].prim_id, ev[1].kind), (0, EventKind::Exit));
        assert_eq!((ev[2].prim_id, ev[2].kind), (1, EventKind::Enter));
        let segs = collect_segments(&hits);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].t1, segs[1].t0);
    }
}
