//! Core domain types and the on-disk scenario format.
//!
//! A scenario bundles a polyline lane map, an ego start pose plus route,
//! and a set of background participants whose trajectories are replayed
//! step-locked during simulation. All types are immutable values after
//! construction and validation; operations on them are pure.

mod format;
pub(crate) mod spatial;

pub use format::{load_scenario, load_scenario_lines, save_scenario, save_scenario_pretty};
pub use spatial::{obb_corners, obb_intersects, relative_position};

use crate::geom::{polyline_length, project_onto_polyline, Vec2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {field}: {message}")]
    Validation { field: String, message: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl ScenarioError {
    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        ScenarioError::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// One lane corridor: a centerline polyline with a constant width. The
/// drivable region of a lane is the set of points within `width / 2` of
/// its centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub centerline: Vec<Vec2>,
    pub width: f64,
}

impl Lane {
    pub fn length(&self) -> f64 {
        polyline_length(&self.centerline)
    }
}

/// Static map: the union of lane corridors is the drivable region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapModel {
    pub lanes: Vec<Lane>,
}

impl MapModel {
    /// True when `p` lies within some lane corridor (boundary inclusive).
    pub fn is_on_road(&self, p: Vec2) -> bool {
        self.lanes.iter().any(|lane| {
            project_onto_polyline(&lane.centerline, p)
                .map_or(false, |proj| proj.distance <= lane.width / 2.0)
        })
    }

    /// Index of the lane whose centerline is closest to `p`, with the
    /// projection. `None` when the map has no lanes.
    pub fn nearest_lane(&self, p: Vec2) -> Option<(usize, crate::geom::PolylineProjection)> {
        self.lanes
            .iter()
            .enumerate()
            .filter_map(|(i, lane)| project_onto_polyline(&lane.centerline, p).map(|pr| (i, pr)))
            .min_by(|a, b| a.1.distance.total_cmp(&b.1.distance))
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        for (i, lane) in self.lanes.iter().enumerate() {
            if lane.centerline.len() < 2 {
                return Err(ScenarioError::validation(
                    "map.lanes.centerline",
                    format!("lane {i} has fewer than 2 centerline points"),
                ));
            }
            if !(lane.width > 0.0) {
                return Err(ScenarioError::validation(
                    "map.lanes.width",
                    format!("lane {i} has non-positive width {}", lane.width),
                ));
            }
            for (k, w) in lane.centerline.windows(2).enumerate() {
                if w[0] == w[1] {
                    return Err(ScenarioError::validation(
                        "map.lanes.centerline",
                        format!("lane {i} repeats point at index {k}"),
                    ));
                }
                if !(w[0].x.is_finite() && w[0].y.is_finite()) {
                    return Err(ScenarioError::validation(
                        "map.lanes.centerline",
                        format!("lane {i} has a non-finite point at index {k}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Pose, speed and footprint of one vehicle at one instant.
///
/// Heading is radians in `(-pi, pi]`, measured counter-clockwise from
/// the world x axis. The footprint is a `length x width` rectangle
/// centered at `position` and aligned with `heading`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn validate(&self, field: &str) -> Result<(), ScenarioError> {
        if !(self.speed >= 0.0) {
            return Err(ScenarioError::validation(field, "speed must be >= 0"));
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(ScenarioError::validation(field, "length and width must be > 0"));
        }
        if !self.heading.is_finite()
            || self.heading <= -std::f64::consts::PI - 1e-12
            || self.heading > std::f64::consts::PI + 1e-12
        {
            return Err(ScenarioError::validation(field, "heading must lie in (-pi, pi]"));
        }
        if !(self.position.x.is_finite() && self.position.y.is_finite()) {
            return Err(ScenarioError::validation(field, "position must be finite"));
        }
        Ok(())
    }

    /// Unit vector along the heading.
    pub fn forward(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin())
    }
}

/// A uniformly sampled state sequence; index `t` is time `t * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<VehicleState>,
    pub dt: f64,
}

impl Trajectory {
    pub fn validate(&self, field: &str) -> Result<(), ScenarioError> {
        if self.states.is_empty() {
            return Err(ScenarioError::validation(field, "trajectory has no states"));
        }
        if !(self.dt > 0.0) {
            return Err(ScenarioError::validation(field, "dt must be > 0"));
        }
        for s in &self.states {
            s.validate(field)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// A background participant: an id, a footprint and a replayed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub trajectory: Trajectory,
}

impl Participant {
    /// State replayed at simulation step `t`; participants hold their
    /// final state once the stored trajectory is exhausted.
    pub fn state_at(&self, t: usize) -> &VehicleState {
        let idx = t.min(self.trajectory.states.len() - 1);
        &self.trajectory.states[idx]
    }
}

/// Whether a scenario came from the regular corpus or from the
/// adversarial generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Regular,
    Generated,
}

/// A complete driving scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub dt: f64,
    pub horizon: usize,
    pub map: MapModel,
    pub ego_start: VehicleState,
    pub ego_route: Vec<Vec2>,
    pub participants: Vec<Participant>,
    pub origin: Origin,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.dt > 0.0) {
            return Err(ScenarioError::validation("dt", "must be > 0"));
        }
        if self.horizon < 1 {
            return Err(ScenarioError::validation("horizon", "must be >= 1"));
        }
        self.map.validate()?;
        self.ego_start.validate("ego.start")?;
        if self.ego_route.len() < 2 {
            return Err(ScenarioError::validation("ego.route", "needs at least 2 waypoints"));
        }
        let mut seen = BTreeSet::new();
        for p in &self.participants {
            if !seen.insert(p.id.as_str()) {
                return Err(ScenarioError::validation(
                    "participants.id",
                    format!("duplicate participant id {:?}", p.id),
                ));
            }
            p.trajectory.validate("participants.states")?;
            if p.trajectory.dt != self.dt {
                return Err(ScenarioError::validation(
                    "participants.states",
                    format!(
                        "participant {:?} has dt {} but the scenario uses {}",
                        p.id, p.trajectory.dt, self.dt
                    ),
                ));
            }
            let (l0, w0) = (p.trajectory.states[0].length, p.trajectory.states[0].width);
            if p.trajectory.states.iter().any(|s| s.length != l0 || s.width != w0) {
                return Err(ScenarioError::validation(
                    "participants",
                    format!("participant {:?} changes footprint mid-trajectory", p.id),
                ));
            }
        }
        Ok(())
    }

    pub fn route_length(&self) -> f64 {
        polyline_length(&self.ego_route)
    }
}

/// Ego-relative quadrant of another vehicle. Sector boundaries sit on
/// the 45-degree diagonals; each sector is closed at its counter-clockwise
/// start and open at its end (see [`relative_position`]).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum RelativeRegion {
    Front,
    Behind,
    Left,
    Right,
}

impl RelativeRegion {
    pub const ALL: [RelativeRegion; 4] = [
        RelativeRegion::Front,
        RelativeRegion::Behind,
        RelativeRegion::Left,
        RelativeRegion::Right,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelativeRegion::Front => "Front",
            RelativeRegion::Behind => "Behind",
            RelativeRegion::Left => "Left",
            RelativeRegion::Right => "Right",
        }
    }
}

impl std::fmt::Display for RelativeRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Non-empty set of ego-relative regions flagged as the agent's current
/// vulnerability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalArea {
    regions: BTreeSet<RelativeRegion>,
}

impl CriticalArea {
    pub fn new(regions: impl IntoIterator<Item = RelativeRegion>) -> Result<Self, ScenarioError> {
        let regions: BTreeSet<_> = regions.into_iter().collect();
        if regions.is_empty() {
            return Err(ScenarioError::validation("critical_area", "must be non-empty"));
        }
        Ok(CriticalArea { regions })
    }

    pub fn single(region: RelativeRegion) -> Self {
        CriticalArea {
            regions: std::iter::once(region).collect(),
        }
    }

    pub fn contains(&self, region: RelativeRegion) -> bool {
        self.regions.contains(&region)
    }

    pub fn iter(&self) -> impl Iterator<Item = RelativeRegion> + '_ {
        self.regions.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl std::fmt::Display for CriticalArea {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for r in self.iter() {
            if !first {
                f.write_str(", ")?;
            }
            f.write_str(r.as_str())?;
            first = false;
        }
        Ok(())
    }
}
