//! Kinematic bicycle model shared by the ego integrator and the
//! background-vehicle maneuver rollouts.

use super::Action;
use crate::geom::{wrap_angle, Vec2};
use crate::scenario::VehicleState;
use serde::{Deserialize, Serialize};

/// Physical limits of the bicycle model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Distance between axles, meters.
    pub wheelbase: f64,
    /// Front-wheel angle bound, radians.
    pub max_steer: f64,
    /// Acceleration bound, m/s^2 (applies to both throttle and brake).
    pub max_accel: f64,
    /// Speed bound, m/s.
    pub max_speed: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 2.8,
            max_steer: 0.6,
            max_accel: 4.0,
            max_speed: 20.0,
        }
    }
}

impl VehicleParams {
    /// Largest possible magnitude of the yaw rate, rad/s.
    pub fn max_yaw_rate(&self) -> f64 {
        self.max_speed / self.wheelbase * self.max_steer.tan()
    }
}

/// Advance one step. Speed is updated first, then heading (with the new
/// speed), then position along the new heading; speed never goes
/// negative.
pub fn bicycle_step(s: &VehicleState, action: Action, p: &VehicleParams, dt: f64) -> VehicleState {
    let accel = action.acc * p.max_accel;
    let speed = (s.speed + accel * dt).clamp(0.0, p.max_speed);
    let steer = action.steer * p.max_steer;
    let heading = wrap_angle(s.heading + speed / p.wheelbase * steer.tan() * dt);
    let position = s.position + Vec2::new(heading.cos(), heading.sin()) * (speed * dt);
    VehicleState {
        position,
        heading,
        speed,
        ..*s
    }
}

/// Whether a consecutive state pair could have been produced by
/// [`bicycle_step`] under `p`, within tolerance `tol`.
pub fn kinematically_feasible(
    prev: &VehicleState,
    next: &VehicleState,
    p: &VehicleParams,
    dt: f64,
    tol: f64,
) -> bool {
    if next.speed < 0.0 || next.speed > p.max_speed + tol {
        return false;
    }
    if (next.speed - prev.speed).abs() > p.max_accel * dt + tol {
        return false;
    }
    let yaw_bound = next.speed / p.wheelbase * p.max_steer.tan() * dt;
    if wrap_angle(next.heading - prev.heading).abs() > yaw_bound + tol {
        return false;
    }
    (next.position - prev.position).norm() <= next.speed * dt + tol
}

/// Conservative time-to-collision estimate treating both vehicles as
/// discs of half-diagonal radius. `None` when the pair is not closing.
pub fn time_to_collision(a: &VehicleState, b: &VehicleState) -> Option<f64> {
    let rel = b.position - a.position;
    let dist = rel.norm();
    let radius = |s: &VehicleState| s.length.hypot(s.width) / 2.0;
    let gap = dist - radius(a) - radius(b);
    if gap <= 0.0 {
        return Some(0.0);
    }
    let dir = rel.normalized()?;
    let va = a.forward() * a.speed;
    let vb = b.forward() * b.speed;
    let closing = (va - vb).dot(dir);
    if closing > 1e-9 {
        Some(gap / closing)
    } else {
        None
    }
}
