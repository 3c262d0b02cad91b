//! Planar lidar: analytic ray casting against lane-corridor capsules and
//! vehicle bounding boxes.
//!
//! A lane corridor is the set of points within half the lane width of its
//! centerline (rectangle per segment plus a disc at every vertex). A ray's
//! reading is the distance to whichever comes first: the edge of the last
//! covered stretch of road, or a vehicle box. Readings are normalized by
//! the maximum range; rays pointing into a disabled sector read exactly 1.

use super::SensorMask;
use crate::geom::{wrap_angle, Vec2};
use crate::scenario::spatial::classify_bearing;
use crate::scenario::{MapModel, VehicleState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    /// Number of rays, uniformly spaced starting at body-frame forward.
    pub rays: usize,
    /// Maximum sensing range, meters.
    pub max_range: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            rays: 36,
            max_range: 50.0,
        }
    }
}

/// Cast all rays from the center of `state`. Returns `cfg.rays` readings
/// in `[0, 1]`.
pub fn cast_rays(
    state: &VehicleState,
    map: &MapModel,
    obstacles: &[VehicleState],
    mask: &SensorMask,
    cfg: &LidarConfig,
) -> Vec<f64> {
    assert!(cfg.rays >= 4, "need at least 4 rays");
    let mut out = Vec::with_capacity(cfg.rays);
    for i in 0..cfg.rays {
        let body_angle = wrap_angle(2.0 * std::f64::consts::PI * i as f64 / cfg.rays as f64);
        if mask.is_disabled(classify_bearing(body_angle)) {
            out.push(1.0);
            continue;
        }
        let world_angle = state.heading + body_angle;
        let dir = Vec2::new(world_angle.cos(), world_angle.sin());
        let t = free_distance(state.position, dir, map, obstacles, cfg.max_range);
        out.push(t / cfg.max_range);
    }
    out
}

/// Distance along the ray until free space ends: either the corridor
/// union stops covering the ray, or a vehicle box is hit. Capped at
/// `max_range`. Returns 0 when the origin is already off-road.
pub fn free_distance(
    origin: Vec2,
    dir: Vec2,
    map: &MapModel,
    obstacles: &[VehicleState],
    max_range: f64,
) -> f64 {
    let mut covered: Vec<(f64, f64)> = Vec::new();
    for lane in &map.lanes {
        let r = lane.width / 2.0;
        for w in lane.centerline.windows(2) {
            if let Some(iv) = ray_segment_rect(origin, dir, w[0], w[1], r, max_range) {
                covered.push(iv);
            }
        }
        for &v in &lane.centerline {
            if let Some(iv) = ray_disc(origin, dir, v, r, max_range) {
                covered.push(iv);
            }
        }
    }
    let road_exit = first_uncovered(&mut covered, max_range);

    let mut hit = max_range;
    for obs in obstacles {
        if let Some((t0, _)) = ray_obb(origin, dir, obs, max_range) {
            hit = hit.min(t0);
        }
    }
    road_exit.min(hit)
}

/// Sweep a set of `[start, end]` intervals and return the first point of
/// `[0, cap]` not covered by their union.
fn first_uncovered(intervals: &mut [(f64, f64)], cap: f64) -> f64 {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered_to = 0.0;
    for &(start, end) in intervals.iter() {
        if start > covered_to + 1e-9 {
            break;
        }
        if end > covered_to {
            covered_to = end;
        }
        if covered_to >= cap {
            return cap;
        }
    }
    covered_to.min(cap)
}

/// Intersection interval of the ray with the rectangle of half-width `r`
/// around segment `a-b`, clipped to `[0, cap]`.
fn ray_segment_rect(
    origin: Vec2,
    dir: Vec2,
    a: Vec2,
    b: Vec2,
    r: f64,
    cap: f64,
) -> Option<(f64, f64)> {
    let axis = (b - a).normalized()?;
    let len = (b - a).norm();
    let center = (a + b) * 0.5;
    slab_interval(origin - center, dir, axis, len / 2.0, axis.perp(), r, cap)
}

/// Intersection interval of the ray with the oriented box of `state`.
fn ray_obb(origin: Vec2, dir: Vec2, state: &VehicleState, cap: f64) -> Option<(f64, f64)> {
    let fwd = state.forward();
    slab_interval(
        origin - state.position,
        dir,
        fwd,
        state.length / 2.0,
        fwd.perp(),
        state.width / 2.0,
        cap,
    )
}

fn slab_interval(
    rel: Vec2,
    dir: Vec2,
    u: Vec2,
    hu: f64,
    v: Vec2,
    hv: f64,
    cap: f64,
) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = cap;
    for (axis, half) in [(u, hu), (v, hv)] {
        let o = rel.dot(axis);
        let d = dir.dot(axis);
        if d.abs() < 1e-12 {
            if o.abs() > half {
                return None;
            }
            continue;
        }
        let (mut lo, mut hi) = ((-half - o) / d, (half - o) / d);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

fn ray_disc(origin: Vec2, dir: Vec2, center: Vec2, r: f64, cap: f64) -> Option<(f64, f64)> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_sq() - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let (t0, t1) = (-b - sq, -b + sq);
    if t1 < 0.0 || t0 > cap {
        return None;
    }
    Some((t0.max(0.0), t1.min(cap)))
}
