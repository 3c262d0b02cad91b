//! Rule-based multi-modal trajectory prior for background vehicles.
//!
//! Stands in for a learned predictor: enumerates a fixed grid of
//! maneuvers, rolls each out under the bicycle model so every candidate
//! is kinematically feasible and continuous with the vehicle's history,
//! and attaches a categorical prior over maneuver families. Candidates
//! that leave the drivable corridor keep a tenth of their weight rather
//! than being discarded; off-nominal motion is allowed but low-prior.

use crate::geom::{point_at_arc_len, project_onto_polyline, tangent_at_arc_len, wrap_angle, Vec2};
use crate::scenario::{MapModel, Trajectory, VehicleState};
use crate::sim::{bicycle_step, Action, VehicleParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("requested {requested} candidates but the maneuver grid enumerates only {max}")]
    TooManyCandidates { requested: usize, max: usize },
    #[error("at least one candidate is required")]
    EmptyRequest,
    #[error("history is empty")]
    EmptyHistory,
}

/// Historical information up to the split step: everything the prior may
/// condition on.
#[derive(Debug, Clone)]
pub struct HistoryContext<'a> {
    pub map: &'a MapModel,
    pub av_history: &'a [VehicleState],
    pub bv_history: &'a [VehicleState],
    /// History/future boundary, in steps.
    pub split_step: usize,
    /// Total scenario horizon, in steps; futures span the remainder.
    pub horizon: usize,
    pub dt: f64,
}

/// One future with its prior likelihood. Probabilities over a candidate
/// set sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrajectory {
    pub future: Trajectory,
    pub prior_prob: f64,
    pub maneuver: Maneuver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneSide {
    Left,
    Right,
}

/// Maneuver families sampled by the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Maneuver {
    /// Follow the lane center at `speed_factor` times the current speed.
    KeepLane { speed_factor: f64 },
    /// Follow the lane while decelerating at `decel` m/s^2 until stopped.
    Brake { decel: f64 },
    /// Follow the lane while accelerating at `accel` m/s^2 toward v_max.
    Accelerate { accel: f64 },
    /// Shift one lane width to the side over `duration` seconds.
    LaneChange { side: LaneSide, duration: f64 },
    /// Intercept the ego's projected position `duration` seconds out,
    /// offset `lateral_offset` meters to its side, then hold course.
    CutTowardEgo { lateral_offset: f64, duration: f64 },
    /// Sinusoidal weave around the lane center with `amplitude` meters.
    Swerve { amplitude: f64 },
}

impl Maneuver {
    fn family(&self) -> usize {
        match self {
            Maneuver::KeepLane { .. } => 0,
            Maneuver::Brake { .. } => 1,
            Maneuver::Accelerate { .. } => 2,
            Maneuver::LaneChange { side: LaneSide::Left, .. } => 3,
            Maneuver::LaneChange { side: LaneSide::Right, .. } => 4,
            Maneuver::CutTowardEgo { .. } => 5,
            Maneuver::Swerve { .. } => 6,
        }
    }
}

const FAMILY_WEIGHTS: [f64; 7] = [0.40, 0.15, 0.15, 0.10, 0.10, 0.05, 0.05];

/// Weight retained by candidates that leave the drivable corridor.
const OFF_ROAD_FACTOR: f64 = 0.1;

/// The full maneuver grid in enumeration order: families are interleaved
/// so small `K` still draws a diverse set, and the first entry is plain
/// lane keeping.
pub fn maneuver_grid(params: &VehicleParams) -> Vec<Maneuver> {
    use Maneuver::*;
    let a = params.max_accel;
    let per_family: [Vec<Maneuver>; 7] = [
        vec![
            KeepLane { speed_factor: 1.0 },
            KeepLane { speed_factor: 0.9 },
            KeepLane { speed_factor: 1.1 },
            KeepLane { speed_factor: 0.8 },
            KeepLane { speed_factor: 1.2 },
            KeepLane { speed_factor: 0.7 },
            KeepLane { speed_factor: 1.3 },
            KeepLane { speed_factor: 0.6 },
        ],
        vec![
            Brake { decel: a },
            Brake { decel: a / 2.0 },
            Brake { decel: a / 4.0 },
        ],
        vec![
            Accelerate { accel: a },
            Accelerate { accel: a / 2.0 },
            Accelerate { accel: a / 4.0 },
        ],
        vec![
            LaneChange { side: LaneSide::Left, duration: 1.5 },
            LaneChange { side: LaneSide::Left, duration: 2.5 },
            LaneChange { side: LaneSide::Left, duration: 3.5 },
        ],
        vec![
            LaneChange { side: LaneSide::Right, duration: 1.5 },
            LaneChange { side: LaneSide::Right, duration: 2.5 },
            LaneChange { side: LaneSide::Right, duration: 3.5 },
        ],
        vec![
            CutTowardEgo { lateral_offset: 0.0, duration: 1.5 },
            CutTowardEgo { lateral_offset: 1.8, duration: 1.5 },
            CutTowardEgo { lateral_offset: -1.8, duration: 1.5 },
            CutTowardEgo { lateral_offset: 2.4, duration: 1.5 },
            CutTowardEgo { lateral_offset: -2.4, duration: 1.5 },
            CutTowardEgo { lateral_offset: 1.8, duration: 2.5 },
            CutTowardEgo { lateral_offset: -1.8, duration: 2.5 },
            CutTowardEgo { lateral_offset: 0.0, duration: 2.5 },
        ],
        vec![
            Swerve { amplitude: 0.5 },
            Swerve { amplitude: 1.0 },
            Swerve { amplitude: 1.5 },
            Swerve { amplitude: 2.0 },
        ],
    ];
    let mut out = Vec::new();
    let longest = per_family.iter().map(Vec::len).max().unwrap();
    for i in 0..longest {
        for fam in &per_family {
            if let Some(m) = fam.get(i) {
                out.push(*m);
            }
        }
    }
    out
}

/// Enumerate `k` candidates for the background vehicle in `ctx`, with
/// prior probabilities normalized to sum to one.
pub fn generate_candidates(
    ctx: &HistoryContext<'_>,
    k: usize,
    params: &VehicleParams,
) -> Result<Vec<CandidateTrajectory>, PriorError> {
    if k == 0 {
        return Err(PriorError::EmptyRequest);
    }
    let grid = maneuver_grid(params);
    if k > grid.len() {
        return Err(PriorError::TooManyCandidates {
            requested: k,
            max: grid.len(),
        });
    }
    let bv_start = *ctx.bv_history.last().ok_or(PriorError::EmptyHistory)?;
    let ego_anchor = ctx.av_history.last().copied().unwrap_or(VehicleState {
        position: bv_start.position + bv_start.forward() * 20.0,
        ..bv_start
    });
    let steps = ctx.horizon.saturating_sub(ctx.split_step).max(1);

    let drawn = &grid[..k];
    let mut family_counts = [0usize; 7];
    for m in drawn {
        family_counts[m.family()] += 1;
    }

    let env = RolloutEnv {
        map: ctx.map,
        params,
        ego_anchor,
    };
    let mut candidates: Vec<CandidateTrajectory> = drawn
        .iter()
        .map(|&m| {
            let future = rollout_maneuver(&bv_start, m, steps, ctx.dt, &env);
            let mut weight = FAMILY_WEIGHTS[m.family()] / family_counts[m.family()] as f64;
            if future.states.iter().any(|s| !ctx.map.is_on_road(s.position)) {
                weight *= OFF_ROAD_FACTOR;
            }
            CandidateTrajectory {
                future,
                prior_prob: weight,
                maneuver: m,
            }
        })
        .collect();

    let total: f64 = candidates.iter().map(|c| c.prior_prob).sum();
    for c in &mut candidates {
        c.prior_prob /= total;
    }
    Ok(candidates)
}

/// Everything a maneuver rollout needs besides the vehicle state.
#[derive(Debug, Clone, Copy)]
pub struct RolloutEnv<'a> {
    pub map: &'a MapModel,
    pub params: &'a VehicleParams,
    /// Ego state at the split; cut maneuvers intercept its projection.
    pub ego_anchor: VehicleState,
}

/// Forward-integrate `steps` bicycle steps under the maneuver's control
/// law. Every consecutive state pair is feasible by construction.
pub fn rollout_maneuver(
    start: &VehicleState,
    maneuver: Maneuver,
    steps: usize,
    dt: f64,
    env: &RolloutEnv<'_>,
) -> Trajectory {
    let reference = LaneReference::for_state(env.map, start);
    let v0 = start.speed;
    let mut state = *start;
    let mut states = Vec::with_capacity(steps);
    for k in 0..steps {
        let elapsed = k as f64 * dt;
        let action = control_law(&state, maneuver, elapsed, v0, &reference, env);
        state = bicycle_step(&state, action, env.params, dt);
        states.push(state);
    }
    Trajectory { states, dt }
}

fn control_law(
    state: &VehicleState,
    maneuver: Maneuver,
    elapsed: f64,
    v0: f64,
    reference: &LaneReference,
    env: &RolloutEnv<'_>,
) -> Action {
    let p = env.params;
    match maneuver {
        Maneuver::KeepLane { speed_factor } => Action::new(
            reference.steer_toward_offset(state, 0.0, p),
            speed_command(state.speed, v0 * speed_factor, p),
        ),
        Maneuver::Brake { decel } => Action::new(
            reference.steer_toward_offset(state, 0.0, p),
            -(decel / p.max_accel),
        ),
        Maneuver::Accelerate { accel } => Action::new(
            reference.steer_toward_offset(state, 0.0, p),
            accel / p.max_accel,
        ),
        Maneuver::LaneChange { side, duration } => {
            let sign = match side {
                LaneSide::Left => 1.0,
                LaneSide::Right => -1.0,
            };
            let x = (elapsed / duration).clamp(0.0, 1.0);
            let offset = sign * reference.lane_width * (3.0 * x * x - 2.0 * x * x * x);
            Action::new(
                reference.steer_toward_offset(state, offset, p),
                speed_command(state.speed, v0, p),
            )
        }
        Maneuver::CutTowardEgo { lateral_offset, duration } => {
            if elapsed >= duration {
                return Action::new(0.0, speed_command(state.speed, v0.max(6.0), p));
            }
            // Rendezvous with the ego's dead-reckoned position at the
            // end of the cut, offset to its side (positive = ego-left).
            let anchor = &env.ego_anchor;
            let aim = anchor.position
                + anchor.forward() * (anchor.speed * duration)
                + anchor.forward().perp() * lateral_offset;
            Action::new(
                steer_at_point(state, aim, p),
                speed_command(state.speed, v0.max(6.0), p),
            )
        }
        Maneuver::Swerve { amplitude } => {
            let offset = amplitude * (2.0 * std::f64::consts::PI * elapsed / SWERVE_PERIOD).sin();
            Action::new(
                reference.steer_toward_offset(state, offset, p),
                speed_command(state.speed, v0, p),
            )
        }
    }
}

const SWERVE_PERIOD: f64 = 4.0;

/// Proportional speed controller with a half-second time constant.
fn speed_command(speed: f64, target: f64, p: &VehicleParams) -> f64 {
    ((target.clamp(0.0, p.max_speed) - speed) / (p.max_accel * 0.5)).clamp(-1.0, 1.0)
}

/// Pure-pursuit steering command toward `aim`.
fn steer_at_point(state: &VehicleState, aim: Vec2, p: &VehicleParams) -> f64 {
    let rel = aim - state.position;
    let ld = rel.norm().max(1.0);
    let alpha = wrap_angle(rel.y.atan2(rel.x) - state.heading);
    let steer = (2.0 * p.wheelbase * alpha.sin()).atan2(ld);
    (steer / p.max_steer).clamp(-1.0, 1.0)
}

/// The centerline a maneuver tracks: the nearest lane, or a virtual
/// straight lane along the start heading when the map is empty.
struct LaneReference {
    centerline: Vec<Vec2>,
    lane_width: f64,
}

impl LaneReference {
    fn for_state(map: &MapModel, state: &VehicleState) -> Self {
        if let Some((idx, _)) = map.nearest_lane(state.position) {
            LaneReference {
                centerline: map.lanes[idx].centerline.clone(),
                lane_width: map.lanes[idx].width,
            }
        } else {
            LaneReference {
                centerline: vec![
                    state.position - state.forward() * 50.0,
                    state.position + state.forward() * 500.0,
                ],
                lane_width: 3.5,
            }
        }
    }

    /// Pure pursuit toward a point ahead on the centerline, shifted
    /// laterally by `offset` (positive left of travel).
    fn steer_toward_offset(&self, state: &VehicleState, offset: f64, p: &VehicleParams) -> f64 {
        let proj = match project_onto_polyline(&self.centerline, state.position) {
            Some(pr) => pr,
            None => return 0.0,
        };
        let lookahead = (state.speed * 0.6).max(3.0);
        let s = proj.arc_len + lookahead;
        let base = point_at_arc_len(&self.centerline, s);
        let tangent = tangent_at_arc_len(&self.centerline, s);
        let aim = base + tangent.perp() * offset;
        steer_at_point(state, aim, p)
    }
}
