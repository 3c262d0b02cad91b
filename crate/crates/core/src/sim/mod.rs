//! Deterministic 2D driving environment.
//!
//! The ego vehicle follows the kinematic bicycle model; background
//! vehicles replay their stored trajectories step-locked. Episodes end on
//! arrival, collision, leaving the road, or exhausting the scenario
//! horizon, with the outcome flags evaluated in exactly that order.

mod rays;
mod vehicle;

pub use rays::{cast_rays, free_distance, LidarConfig};
pub use vehicle::{bicycle_step, kinematically_feasible, time_to_collision, VehicleParams};

use crate::geom::{project_onto_polyline, wrap_angle, Vec2};
use crate::scenario::{obb_intersects, RelativeRegion, Scenario, VehicleState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("step called before reset")]
    NotReset,
    #[error("step called after the episode finished")]
    EpisodeDone,
}

/// Steering and throttle/brake command, both clamped to `[-1, 1]`.
/// Positive steer turns left (counter-clockwise); positive acc throttles,
/// negative brakes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub steer: f64,
    pub acc: f64,
}

impl Action {
    pub fn new(steer: f64, acc: f64) -> Self {
        Action {
            steer: steer.clamp(-1.0, 1.0),
            acc: acc.clamp(-1.0, 1.0),
        }
    }
}

/// Ego-relative sensor sectors whose rays are blanked to max range.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorMask {
    disabled: BTreeSet<RelativeRegion>,
}

impl SensorMask {
    pub fn none() -> Self {
        SensorMask::default()
    }

    pub fn all() -> Self {
        SensorMask {
            disabled: RelativeRegion::ALL.into_iter().collect(),
        }
    }

    pub fn of(regions: impl IntoIterator<Item = RelativeRegion>) -> Self {
        SensorMask {
            disabled: regions.into_iter().collect(),
        }
    }

    pub fn is_disabled(&self, region: RelativeRegion) -> bool {
        self.disabled.contains(&region)
    }

    pub fn is_empty(&self) -> bool {
        self.disabled.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = RelativeRegion> + '_ {
        self.disabled.iter().copied()
    }
}

/// Reward shaping constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Driving reward coefficient.
    pub alpha: f64,
    /// Lateral deviation at which the driving reward reaches zero is
    /// `d_max / 2`; set this to the lane width.
    pub d_max: f64,
    pub collision_penalty: f64,
    pub success_reward: f64,
    pub off_road_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 1.0,
            // The procedural corpus builds 7 m wide roads.
            d_max: 7.0,
            collision_penalty: -1.0,
            success_reward: 10.0,
            off_road_penalty: -10.0,
        }
    }
}

/// Episode outcome flags. At most one of `crashed` / `off_road` /
/// `arrived` is set; the episode is done exactly when any flag is set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeFlags {
    pub crashed: bool,
    pub off_road: bool,
    pub arrived: bool,
    pub timeout: bool,
}

impl OutcomeFlags {
    pub fn any(&self) -> bool {
        self.crashed || self.off_road || self.arrived || self.timeout
    }
}

/// Observation: a normalized ego block, navigation block and ray block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `[speed, steering, last throttle/brake, yaw rate]`, each scaled to
    /// its fixed range.
    pub ego: [f64; 4],
    /// Relative distance and heading to each of the next two route
    /// waypoints.
    pub nav: [f64; 4],
    /// Ray readings in `[0, 1]`; masked rays read exactly 1.
    pub rays: Vec<f64>,
}

impl Observation {
    pub fn dim_for(rays: usize) -> usize {
        8 + rays
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(8 + self.rays.len());
        v.extend_from_slice(&self.ego);
        v.extend_from_slice(&self.nav);
        v.extend_from_slice(&self.rays);
        v
    }
}

/// One step's results.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub flags: OutcomeFlags,
}

/// Environment tunables; `dt` comes from the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub vehicle: VehicleParams,
    pub lidar: LidarConfig,
    pub reward: RewardConfig,
    /// Consecutive off-road steps before the episode ends off-road.
    pub off_road_patience: usize,
    /// Arrival needs this much route fraction covered...
    pub arrival_progress: f64,
    /// ...and to be within this many meters of the final waypoint.
    pub arrival_distance: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            vehicle: VehicleParams::default(),
            lidar: LidarConfig::default(),
            reward: RewardConfig::default(),
            off_road_patience: 5,
            arrival_progress: 0.99,
            arrival_distance: 5.0,
        }
    }
}

/// Driving reward: dense progress term zeroed on terminal steps, plus the
/// sparse collision / arrival / off-road terms.
///
/// `d_lon` is the signed longitudinal progress along the route this step
/// (meters) and `d_lat` the unsigned lateral offset from the lane center.
pub fn compute_reward(d_lon: f64, d_lat: f64, flags: &OutcomeFlags, cfg: &RewardConfig) -> f64 {
    let r_drive = if flags.any() {
        0.0
    } else {
        cfg.alpha * d_lon * (1.0 - 2.0 * d_lat.abs() / cfg.d_max).clamp(0.0, 1.0)
    };
    let r_collision = if flags.crashed { cfg.collision_penalty } else { 0.0 };
    let r_done = if flags.arrived {
        cfg.success_reward
    } else if flags.off_road {
        cfg.off_road_penalty
    } else {
        0.0
    };
    r_drive + r_collision + r_done
}

/// Fraction of the route's arc length covered by the projection of
/// `position` onto the route polyline.
pub fn route_progress(position: Vec2, route: &[Vec2]) -> f64 {
    let total = crate::geom::polyline_length(route);
    if total <= 0.0 {
        return 0.0;
    }
    match project_onto_polyline(route, position) {
        Some(p) => (p.arc_len / total).clamp(0.0, 1.0),
        None => 0.0,
    }
}

/// Newline-delimited episode log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLogRecord {
    pub t: usize,
    pub state: VehicleState,
    pub action: Action,
    pub reward: f64,
    pub flags: OutcomeFlags,
}

/// A single-episode environment instance. Not reusable across scenarios;
/// call [`Environment::reset`] to start over.
pub struct Environment {
    cfg: SimConfig,
    scenario: Option<Scenario>,
    mask: SensorMask,
    step_idx: usize,
    ego: VehicleState,
    last_action: Action,
    last_yaw_rate: f64,
    progress_m: f64,
    off_road_streak: usize,
    done: bool,
    route_len: f64,
}

impl Environment {
    pub fn new(cfg: SimConfig) -> Self {
        Environment {
            cfg,
            scenario: None,
            mask: SensorMask::none(),
            step_idx: 0,
            ego: VehicleState {
                position: Vec2::ZERO,
                heading: 0.0,
                speed: 0.0,
                length: 4.0,
                width: 2.0,
            },
            last_action: Action::new(0.0, 0.0),
            last_yaw_rate: 0.0,
            progress_m: 0.0,
            off_road_streak: 0,
            done: false,
            route_len: 0.0,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Place the ego at the scenario start and rewind all replays.
    ///
    /// The environment is fully deterministic; `_seed` is accepted for
    /// interface stability and currently selects nothing.
    pub fn reset(
        &mut self,
        scenario: &Scenario,
        mask: &SensorMask,
        _seed: u64,
    ) -> Result<Observation, SimError> {
        scenario
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        if !scenario.map.is_on_road(scenario.ego_start.position) {
            return Err(SimError::InvalidScenario(
                "ego start lies outside every lane corridor".to_string(),
            ));
        }
        self.scenario = Some(scenario.clone());
        self.mask = mask.clone();
        self.step_idx = 0;
        self.ego = scenario.ego_start;
        self.last_action = Action::new(0.0, 0.0);
        self.last_yaw_rate = 0.0;
        self.progress_m = self.project_route(self.ego.position).0;
        self.off_road_streak = 0;
        self.done = false;
        self.route_len = scenario.route_length();
        Ok(self.observe())
    }

    /// Advance one step. Outcome flags are evaluated in the order
    /// arrived, crashed, off-road, timeout; the first that fires wins.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, SimError> {
        if self.scenario.is_none() {
            return Err(SimError::NotReset);
        }
        if self.done {
            return Err(SimError::EpisodeDone);
        }
        let action = Action::new(action.steer, action.acc);
        let dt = self.scenario.as_ref().unwrap().dt;
        let prev_heading = self.ego.heading;
        self.ego = bicycle_step(&self.ego, action, &self.cfg.vehicle, dt);
        self.last_yaw_rate = wrap_angle(self.ego.heading - prev_heading) / dt;
        self.last_action = action;
        self.step_idx += 1;

        let scenario = self.scenario.as_ref().unwrap();
        let (progress_m, d_lat) = self.project_route(self.ego.position);
        let d_lon = progress_m - self.progress_m;
        self.progress_m = progress_m;

        if scenario.map.is_on_road(self.ego.position) {
            self.off_road_streak = 0;
        } else {
            self.off_road_streak += 1;
        }

        let mut flags = OutcomeFlags::default();
        let arrived = self.route_fraction() >= self.cfg.arrival_progress
            && self
                .ego
                .position
                .distance(*scenario.ego_route.last().unwrap())
                <= self.cfg.arrival_distance;
        let crashed = scenario
            .participants
            .iter()
            .any(|p| obb_intersects(&self.ego, p.state_at(self.step_idx)));
        if arrived {
            flags.arrived = true;
        } else if crashed {
            flags.crashed = true;
        } else if self.off_road_streak >= self.cfg.off_road_patience {
            flags.off_road = true;
        } else if self.step_idx >= scenario.horizon {
            flags.timeout = true;
        }

        let reward = compute_reward(d_lon, d_lat, &flags, &self.cfg.reward);
        self.done = flags.any();
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.done,
            flags,
        })
    }

    pub fn ego_state(&self) -> &VehicleState {
        &self.ego
    }

    /// Replayed background states at the current step.
    pub fn bv_states(&self) -> Vec<VehicleState> {
        self.scenario
            .as_ref()
            .map(|s| {
                s.participants
                    .iter()
                    .map(|p| *p.state_at(self.step_idx))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn step_index(&self) -> usize {
        self.step_idx
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn route_fraction(&self) -> f64 {
        if self.route_len <= 0.0 {
            0.0
        } else {
            (self.progress_m / self.route_len).clamp(0.0, 1.0)
        }
    }

    fn project_route(&self, p: Vec2) -> (f64, f64) {
        let scenario = self.scenario.as_ref().unwrap();
        match project_onto_polyline(&scenario.ego_route, p) {
            Some(proj) => (proj.arc_len, proj.distance),
            None => (0.0, 0.0),
        }
    }

    fn observe(&self) -> Observation {
        let scenario = self.scenario.as_ref().unwrap();
        let v = &self.cfg.vehicle;
        let ego_block = [
            (self.ego.speed / v.max_speed).clamp(0.0, 1.0),
            self.last_action.steer,
            self.last_action.acc,
            (self.last_yaw_rate / v.max_yaw_rate()).clamp(-1.0, 1.0),
        ];

        let (w1, w2) = self.next_waypoints();
        let nav = [
            self.waypoint_distance(w1),
            self.waypoint_bearing(w1),
            self.waypoint_distance(w2),
            self.waypoint_bearing(w2),
        ];

        let obstacles = self.bv_states();
        let rays = cast_rays(&self.ego, &scenario.map, &obstacles, &self.mask, &self.cfg.lidar);
        Observation {
            ego: ego_block,
            nav,
            rays,
        }
    }

    /// The next two route vertices strictly ahead of the current
    /// projection, padded with the final waypoint near the end.
    fn next_waypoints(&self) -> (Vec2, Vec2) {
        let route = &self.scenario.as_ref().unwrap().ego_route;
        let mut arc = 0.0;
        let mut ahead = Vec::new();
        for w in route.windows(2) {
            arc += w[0].distance(w[1]);
            if arc > self.progress_m + 1e-9 {
                ahead.push(w[1]);
                if ahead.len() == 2 {
                    break;
                }
            }
        }
        let last = *route.last().unwrap();
        let w1 = ahead.first().copied().unwrap_or(last);
        let w2 = ahead.get(1).copied().unwrap_or(last);
        (w1, w2)
    }

    fn waypoint_distance(&self, w: Vec2) -> f64 {
        (self.ego.position.distance(w) / self.cfg.lidar.max_range).clamp(0.0, 1.0)
    }

    fn waypoint_bearing(&self, w: Vec2) -> f64 {
        let rel = w - self.ego.position;
        if rel.norm_sq() == 0.0 {
            return 0.0;
        }
        wrap_angle(rel.y.atan2(rel.x) - self.ego.heading) / std::f64::consts::PI
    }
}
