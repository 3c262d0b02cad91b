//! JSON wire format for scenarios.
//!
//! One scenario per file, or newline-delimited for corpora packed into a
//! single file. Distances are meters, angles radians, speeds m/s. The
//! footprint of a participant is stored once per participant; per-step
//! records carry only pose and speed.

use super::{
    MapModel, Origin, Participant, Scenario, ScenarioError, Trajectory, VehicleState,
};
use crate::geom::Vec2;
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct ScenarioWire {
    id: String,
    dt: f64,
    horizon: usize,
    map: MapModel,
    ego: EgoWire,
    participants: Vec<ParticipantWire>,
    origin: Origin,
}

#[derive(Serialize, Deserialize)]
struct EgoWire {
    start: FullStateWire,
    route: Vec<Vec2>,
}

#[derive(Serialize, Deserialize)]
struct FullStateWire {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    length: f64,
    width: f64,
}

#[derive(Serialize, Deserialize)]
struct ParticipantWire {
    id: String,
    states: Vec<StateWire>,
    length: f64,
    width: f64,
}

#[derive(Serialize, Deserialize)]
struct StateWire {
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
}

impl From<&Scenario> for ScenarioWire {
    fn from(s: &Scenario) -> Self {
        ScenarioWire {
            id: s.id.clone(),
            dt: s.dt,
            horizon: s.horizon,
            map: s.map.clone(),
            ego: EgoWire {
                start: FullStateWire {
                    x: s.ego_start.position.x,
                    y: s.ego_start.position.y,
                    heading: s.ego_start.heading,
                    speed: s.ego_start.speed,
                    length: s.ego_start.length,
                    width: s.ego_start.width,
                },
                route: s.ego_route.clone(),
            },
            participants: s
                .participants
                .iter()
                .map(|p| ParticipantWire {
                    id: p.id.clone(),
                    states: p
                        .trajectory
                        .states
                        .iter()
                        .map(|st| StateWire {
                            x: st.position.x,
                            y: st.position.y,
                            heading: st.heading,
                            speed: st.speed,
                        })
                        .collect(),
                    length: p.trajectory.states.first().map_or(4.0, |st| st.length),
                    width: p.trajectory.states.first().map_or(2.0, |st| st.width),
                })
                .collect(),
            origin: s.origin,
        }
    }
}

impl ScenarioWire {
    fn into_scenario(self) -> Scenario {
        Scenario {
            id: self.id,
            dt: self.dt,
            horizon: self.horizon,
            map: self.map,
            ego_start: VehicleState {
                position: Vec2::new(self.ego.start.x, self.ego.start.y),
                heading: self.ego.start.heading,
                speed: self.ego.start.speed,
                length: self.ego.start.length,
                width: self.ego.start.width,
            },
            ego_route: self.ego.route,
            participants: self
                .participants
                .into_iter()
                .map(|p| Participant {
                    trajectory: Trajectory {
                        states: p
                            .states
                            .iter()
                            .map(|st| VehicleState {
                                position: Vec2::new(st.x, st.y),
                                heading: st.heading,
                                speed: st.speed,
                                length: p.length,
                                width: p.width,
                            })
                            .collect(),
                        dt: self.dt,
                    },
                    id: p.id,
                })
                .collect(),
            origin: self.origin,
        }
    }
}

/// Parse and validate one scenario from JSON bytes.
pub fn load_scenario(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    let wire: ScenarioWire =
        serde_json::from_slice(bytes).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let scenario = wire.into_scenario();
    scenario.validate()?;
    Ok(scenario)
}

/// Parse a newline-delimited corpus; blank lines are skipped.
pub fn load_scenario_lines(bytes: &[u8]) -> Result<Vec<Scenario>, ScenarioError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ScenarioError::Parse(format!("not utf-8: {e}")))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| load_scenario(l.as_bytes()))
        .collect()
}

/// Canonical compact JSON bytes: `load(save(s))` structurally equals `s`,
/// and `save(load(save(s)))` is byte-identical to `save(s)`.
pub fn save_scenario(s: &Scenario) -> Vec<u8> {
    serde_json::to_vec(&ScenarioWire::from(s)).expect("scenario serialization cannot fail")
}

/// Indented variant for human inspection.
pub fn save_scenario_pretty(s: &Scenario) -> Vec<u8> {
    serde_json::to_vec_pretty(&ScenarioWire::from(s)).expect("scenario serialization cannot fail")
}
