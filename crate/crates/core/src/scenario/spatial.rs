//! Geometric predicates on vehicle states: ego-relative quadrant
//! classification and oriented-bounding-box overlap.

use super::{RelativeRegion, ScenarioError, VehicleState};
use crate::geom::Vec2;
use std::f64::consts::FRAC_PI_4;

const THREE_QUARTER_PI: f64 = 3.0 * FRAC_PI_4;

/// Classify where `bv` sits relative to `av`, in `av`'s body frame
/// (x forward, y left).
///
/// With bearing `theta = atan2(y_rel, x_rel)`, the quadrants are the
/// half-open sectors `[-45, 45) -> Front`, `[45, 135) -> Left`,
/// `[135, 225) -> Behind`, `[225, 315) -> Right` (degrees). Coincident
/// centers have no bearing and are rejected rather than defaulted.
pub fn relative_position(
    av: &VehicleState,
    bv: &VehicleState,
) -> Result<RelativeRegion, ScenarioError> {
    let rel = bv.position - av.position;
    if rel.norm_sq() == 0.0 {
        return Err(ScenarioError::Degenerate(
            "relative_position of coincident vehicle centers".to_string(),
        ));
    }
    let body = rel.rotated(-av.heading);
    Ok(classify_bearing(body.y.atan2(body.x)))
}

/// Sector of a body-frame bearing in `(-pi, pi]`.
pub(crate) fn classify_bearing(theta: f64) -> RelativeRegion {
    if theta >= -FRAC_PI_4 && theta < FRAC_PI_4 {
        RelativeRegion::Front
    } else if theta >= FRAC_PI_4 && theta < THREE_QUARTER_PI {
        RelativeRegion::Left
    } else if theta >= -THREE_QUARTER_PI && theta < -FRAC_PI_4 {
        RelativeRegion::Right
    } else {
        RelativeRegion::Behind
    }
}

/// Corners of the footprint rectangle, counter-clockwise starting at
/// front-left.
pub fn obb_corners(s: &VehicleState) -> [Vec2; 4] {
    let fwd = s.forward() * (s.length / 2.0);
    let left = s.forward().perp() * (s.width / 2.0);
    [
        s.position + fwd + left,
        s.position - fwd + left,
        s.position - fwd - left,
        s.position + fwd - left,
    ]
}

/// Oriented-rectangle overlap via the separating-axis test over the four
/// face normals. Touching edges count as overlap.
pub fn obb_intersects(a: &VehicleState, b: &VehicleState) -> bool {
    let ca = obb_corners(a);
    let cb = obb_corners(b);
    let axes = [
        a.forward(),
        a.forward().perp(),
        b.forward(),
        b.forward().perp(),
    ];
    for axis in axes {
        let (amin, amax) = project(&ca, axis);
        let (bmin, bmax) = project(&cb, axis);
        if bmin > amax || amin > bmax {
            return false;
        }
    }
    true
}

fn project(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for c in corners {
        let p = c.dot(axis);
        min = min.min(p);
        max = max.max(p);
    }
    (min, max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(x: f64, y: f64, heading: f64) -> VehicleState {
        VehicleState {
            position: Vec2::new(x, y),
            heading,
            speed: 0.0,
            length: 4.0,
            width: 2.0,
        }
    }

    #[test]
    fn axis_aligned_quadrants() {
        let av = state(0.0, 0.0, 0.0);
        assert_eq!(relative_position(&av, &state(10.0, 0.0, 0.0)).unwrap(), RelativeRegion::Front);
        assert_eq!(relative_position(&av, &state(-10.0, 0.0, 0.0)).unwrap(), RelativeRegion::Behind);
        assert_eq!(relative_position(&av, &state(0.0, 10.0, 0.0)).unwrap(), RelativeRegion::Left);
        assert_eq!(relative_position(&av, &state(0.0, -10.0, 0.0)).unwrap(), RelativeRegion::Right);
    }

    #[test]
    fn boundary_diagonal_belongs_to_counter_clockwise_sector() {
        let av = state(0.0, 0.0, 0.0);
        // 45 degrees exactly: half-open rule puts it in Left.
        assert_eq!(relative_position(&av, &state(5.0, 5.0, 0.0)).unwrap(), RelativeRegion::Left);
        assert_eq!(relative_position(&av, &state(-5.0, 5.0, 0.0)).unwrap(), RelativeRegion::Behind);
        assert_eq!(relative_position(&av, &state(-5.0, -5.0, 0.0)).unwrap(), RelativeRegion::Right);
        assert_eq!(relative_position(&av, &state(5.0, -5.0, 0.0)).unwrap(), RelativeRegion::Front);
    }

    #[test]
    fn follows_av_heading() {
        let av = state(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        assert_eq!(relative_position(&av, &state(0.0, 10.0, 0.0)).unwrap(), RelativeRegion::Front);
        assert_eq!(relative_position(&av, &state(-10.0, 0.0, 0.0)).unwrap(), RelativeRegion::Left);
    }

    #[test]
    fn coincident_centers_error() {
        let av = state(1.0, 2.0, 0.3);
        assert!(matches!(
            relative_position(&av, &state(1.0, 2.0, 1.0)),
            Err(ScenarioError::Degenerate(_))
        ));
    }

    #[test]
    fn obb_basic_cases() {
        let a = state(0.0, 0.0, 0.0);
        assert!(obb_intersects(&a, &a));
        assert!(!obb_intersects(&a, &state(10.0, 0.0, 0.0)));
        // Touching end to end: 4 m long rectangles, centers 4 m apart.
        assert!(obb_intersects(&a, &state(4.0, 0.0, 0.0)));
        assert!(!obb_intersects(&a, &state(4.0 + 1e-9, 0.0, 0.0)));
    }

    #[test]
    fn obb_is_symmetric_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let a = state(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-3.1..3.1));
            let b = state(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-3.1..3.1));
            assert_eq!(obb_intersects(&a, &b), obb_intersects(&b, &a));
        }
    }
}
