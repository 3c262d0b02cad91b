//! Minimal 2D vector and polyline helpers shared across the crate.
//!
//! Everything is plain `f64` in meters. Polylines are open chains of
//! vertices; arc-length parametrization is used for route progress and
//! lane-frame projections.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::ops::{Add, Mul, Neg, Sub};

/// A 2D point or displacement in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Serialize for Vec2 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (self.x, self.y).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vec2 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (x, y) = <(f64, f64)>::deserialize(deserializer)?;
        Ok(Vec2 { x, y })
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, rhs: Vec2) -> f64 {
        self.x * rhs.x + self.y * rhs.y
    }

    /// 2D cross product (z component of the 3D cross).
    pub fn cross(self, rhs: Vec2) -> f64 {
        self.x * rhs.y - self.y * rhs.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    /// Unit vector; `None` when the length is zero.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        if n == 0.0 {
            None
        } else {
            Some(Vec2::new(self.x / n, self.y / n))
        }
    }

    /// Rotate counter-clockwise by `angle` radians.
    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Perpendicular vector (90 degrees counter-clockwise).
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    /// Arc length from the polyline start to the closest point, meters.
    pub arc_len: f64,
    /// Unsigned distance from the query point to the closest point.
    pub distance: f64,
    /// The closest point itself.
    pub point: Vec2,
    /// Index of the segment containing the closest point.
    pub segment: usize,
}

/// Total arc length of a polyline.
pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Closest-point projection of `p` onto the polyline `points`.
///
/// Returns `None` for polylines with fewer than two vertices.
pub fn project_onto_polyline(points: &[Vec2], p: Vec2) -> Option<PolylineProjection> {
    if points.len() < 2 {
        return None;
    }
    let mut best: Option<PolylineProjection> = None;
    let mut arc_before = 0.0;
    for (i, w) in points.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let ab = b - a;
        let len = ab.norm();
        let t = if len == 0.0 {
            0.0
        } else {
            ((p - a).dot(ab) / (len * len)).clamp(0.0, 1.0)
        };
        let q = a + ab * t;
        let d = p.distance(q);
        if best.map_or(true, |bst| d < bst.distance) {
            best = Some(PolylineProjection {
                arc_len: arc_before + len * t,
                distance: d,
                point: q,
                segment: i,
            });
        }
        arc_before += len;
    }
    best
}

/// Point on the polyline at arc length `s` (clamped to the ends).
pub fn point_at_arc_len(points: &[Vec2], s: f64) -> Vec2 {
    debug_assert!(points.len() >= 2);
    if s <= 0.0 {
        return points[0];
    }
    let mut remaining = s;
    for w in points.windows(2) {
        let len = w[0].distance(w[1]);
        if remaining <= len && len > 0.0 {
            return w[0] + (w[1] - w[0]) * (remaining / len);
        }
        remaining -= len;
    }
    *points.last().unwrap()
}

/// Tangent direction of the polyline at arc length `s`.
pub fn tangent_at_arc_len(points: &[Vec2], s: f64) -> Vec2 {
    debug_assert!(points.len() >= 2);
    let mut remaining = s.max(0.0);
    for w in points.windows(2) {
        let len = w[0].distance(w[1]);
        if remaining <= len && len > 0.0 {
            return (w[1] - w[0]).normalized().unwrap_or(Vec2::new(1.0, 0.0));
        }
        remaining -= len;
    }
    let n = points.len();
    (points[n - 1] - points[n - 2])
        .normalized()
        .unwrap_or(Vec2::new(1.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn projection_on_two_segment_polyline() {
        let line = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)];
        let proj = project_onto_polyline(&line, Vec2::new(10.0, 5.0)).unwrap();
        assert_relative_eq!(proj.arc_len, 15.0);
        assert_relative_eq!(proj.distance, 0.0);
        let proj = project_onto_polyline(&line, Vec2::new(5.0, 3.0)).unwrap();
        assert_relative_eq!(proj.arc_len, 5.0);
        assert_relative_eq!(proj.distance, 3.0);
    }

    #[test]
    fn arc_len_point_and_tangent() {
        let line = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)];
        assert_eq!(point_at_arc_len(&line, 15.0), Vec2::new(10.0, 5.0));
        assert_eq!(point_at_arc_len(&line, 99.0), Vec2::new(10.0, 10.0));
        let t = tangent_at_arc_len(&line, 12.0);
        assert_relative_eq!(t.x, 0.0);
        assert_relative_eq!(t.y, 1.0);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(0.3), 0.3);
    }
}
