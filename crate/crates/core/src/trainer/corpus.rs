//! Procedural generator of regular driving scenarios: straight roads,
//! curves, merges and crossings, each with replayed lane-following
//! traffic. Background trajectories come from the same bicycle-model
//! rollouts the prior uses, so every file in a corpus is kinematically
//! consistent with the simulator.

use crate::geom::{point_at_arc_len, polyline_length, tangent_at_arc_len, wrap_angle, Vec2};
use crate::prior::{rollout_maneuver, Maneuver, RolloutEnv};
use crate::scenario::{Lane, MapModel, Origin, Participant, Scenario, Trajectory, VehicleState};
use crate::sim::VehicleParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const ROAD_WIDTH: f64 = 7.0;
const DT: f64 = 0.1;
const HORIZON: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    Straight,
    Curve,
    Merge,
    Intersection,
}

const KINDS: [CorpusKind; 4] = [
    CorpusKind::Straight,
    CorpusKind::Curve,
    CorpusKind::Merge,
    CorpusKind::Intersection,
];

impl CorpusKind {
    fn tag(&self) -> &'static str {
        match self {
            CorpusKind::Straight => "straight",
            CorpusKind::Curve => "curve",
            CorpusKind::Merge => "merge",
            CorpusKind::Intersection => "crossing",
        }
    }
}

/// Generate `count` scenarios cycling through the road kinds.
pub fn generate_corpus(count: usize, seed: u64) -> Vec<Scenario> {
    (0..count)
        .map(|i| generate_scenario(KINDS[i % KINDS.len()], i, seed))
        .collect()
}

/// Write one file per scenario into `dir` (`<id>.json`).
pub fn write_corpus(dir: &Path, scenarios: &[Scenario]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in scenarios {
        std::fs::write(dir.join(format!("{}.json", s.id)), crate::scenario::save_scenario(s))?;
    }
    Ok(())
}

/// One deterministic scenario for `(kind, index, seed)`.
pub fn generate_scenario(kind: CorpusKind, index: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let params = VehicleParams::default();
    // Alternate which flank the companion road sits on: straights get a
    // left neighbor, curves a right one, and junction sides flip each
    // time the kind cycle repeats, so small corpora cover both sides.
    let side = match kind {
        CorpusKind::Straight => 1.0,
        CorpusKind::Curve => -1.0,
        _ => {
            if (index / KINDS.len()) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
    };
    let (lanes, ego_lane) = match kind {
        CorpusKind::Straight => {
            let main = straight_lane(&mut rng);
            let parallel = parallel_lane(&main, side);
            (vec![main, parallel], 0)
        }
        CorpusKind::Curve => {
            let main = curved_lane(&mut rng);
            let parallel = parallel_lane(&main, side);
            (vec![main, parallel], 0)
        }
        CorpusKind::Merge => {
            let main = straight_lane(&mut rng);
            let merge = merge_lane(&main, side, &mut rng);
            (vec![main, merge], 0)
        }
        CorpusKind::Intersection => {
            let main = straight_lane(&mut rng);
            let cross = crossing_lane(&main, side, &mut rng);
            (vec![main, cross], 0)
        }
    };
    let map = MapModel { lanes };

    let route = map.lanes[ego_lane].centerline.clone();
    let start_arc = 18.0;
    let start_point = point_at_arc_len(&route, start_arc);
    let tangent = tangent_at_arc_len(&route, start_arc);
    let ego_start = VehicleState {
        position: start_point,
        heading: wrap_angle(tangent.y.atan2(tangent.x)),
        speed: rng.gen_range(4.0..7.0),
        length: 4.0,
        width: 2.0,
    };

    let mut participants = Vec::new();
    let env = RolloutEnv {
        map: &map,
        params: &params,
        ego_anchor: ego_start,
    };
    match kind {
        CorpusKind::Straight | CorpusKind::Curve => {
            // A leader, a trailing vehicle, and side-lane company.
            participants.push(lane_follower(
                &map, 0, start_arc + rng.gen_range(25.0..40.0), 0, 3.5..7.0, &env, &mut rng,
            ));
            participants.push(lane_follower(
                &map, 0, start_arc - 16.0, 1, 5.2..7.2, &env, &mut rng,
            ));
            participants.push(lane_follower(
                &map, 1, start_arc + rng.gen_range(-6.0..10.0), 2, 4.5..6.5, &env, &mut rng,
            ));
        }
        CorpusKind::Merge => {
            participants.push(lane_follower(&map, 1, rng.gen_range(5.0..25.0), 0, 3.5..7.5, &env, &mut rng));
            participants.push(lane_follower(
                &map, 0, start_arc + rng.gen_range(40.0..70.0), 1, 3.5..7.5, &env, &mut rng,
            ));
        }
        CorpusKind::Intersection => {
            participants.push(lane_follower(&map, 1, rng.gen_range(5.0..30.0), 0, 3.5..7.5, &env, &mut rng));
            participants.push(lane_follower(
                &map, 0, start_arc + rng.gen_range(45.0..75.0), 1, 3.5..7.5, &env, &mut rng,
            ));
        }
    }

    let scenario = Scenario {
        id: format!("{}-{index:04}", kind.tag()),
        dt: DT,
        horizon: HORIZON,
        map,
        ego_start,
        ego_route: route,
        participants,
        origin: Origin::Regular,
    };
    debug_assert!(scenario.validate().is_ok());
    scenario
}

fn straight_lane(rng: &mut ChaCha8Rng) -> Lane {
    let length: f64 = rng.gen_range(150.0..190.0);
    let bearing: f64 = rng.gen_range(-0.3..0.3);
    let dir = Vec2::new(bearing.cos(), bearing.sin());
    let n = (length / 10.0).ceil() as usize;
    Lane {
        centerline: (0..=n).map(|i| dir * (length * i as f64 / n as f64)).collect(),
        width: ROAD_WIDTH,
    }
}

fn curved_lane(rng: &mut ChaCha8Rng) -> Lane {
    let lead_in: f64 = rng.gen_range(30.0..50.0);
    let radius: f64 = rng.gen_range(45.0..80.0);
    let sweep: f64 = rng.gen_range(0.8..1.4) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let lead_out: f64 = rng.gen_range(40.0..70.0);

    let mut points = vec![Vec2::ZERO, Vec2::new(lead_in, 0.0)];
    let center = Vec2::new(lead_in, radius * sweep.signum());
    let steps = (radius * sweep.abs() / 4.0).ceil() as usize;
    let start_angle = if sweep > 0.0 { -std::f64::consts::FRAC_PI_2 } else { std::f64::consts::FRAC_PI_2 };
    for i in 1..=steps {
        let a = start_angle + sweep * i as f64 / steps as f64;
        points.push(center + Vec2::new(a.cos(), a.sin()) * radius);
    }
    let end_tangent = Vec2::new(sweep.cos(), sweep.sin());
    let last = *points.last().unwrap();
    let out_steps = (lead_out / 8.0).ceil() as usize;
    for i in 1..=out_steps {
        points.push(last + end_tangent * (lead_out * i as f64 / out_steps as f64));
    }
    Lane {
        centerline: points,
        width: ROAD_WIDTH,
    }
}

/// The same road one lane over: every vertex shifted along the local
/// left normal (`side` +1) or right normal (`side` -1).
fn parallel_lane(main: &Lane, side: f64) -> Lane {
    let line = &main.centerline;
    let n = line.len();
    let centerline = (0..n)
        .map(|i| {
            let tangent = if i + 1 < n {
                line[i + 1] - line[i]
            } else {
                line[i] - line[i - 1]
            };
            let normal = tangent.normalized().unwrap_or(Vec2::new(1.0, 0.0)).perp();
            line[i] + normal * (ROAD_WIDTH * side)
        })
        .collect();
    Lane {
        centerline,
        width: ROAD_WIDTH,
    }
}

/// A ramp converging onto the main lane and continuing along it.
fn merge_lane(main: &Lane, side: f64, rng: &mut ChaCha8Rng) -> Lane {
    let offset = rng.gen_range(9.0..13.0);
    let junction_arc = rng.gen_range(55.0..75.0);
    let main_line = &main.centerline;
    let j = point_at_arc_len(main_line, junction_arc);
    let jt = tangent_at_arc_len(main_line, junction_arc);
    let approach = j - jt * 50.0 + jt.perp() * (offset * side);
    let mid = j - jt * 20.0 + jt.perp() * (offset * side * 0.35);
    let mut points = vec![approach, mid, j];
    // Continue along the main lane after the junction.
    let total = polyline_length(main_line);
    let mut arc = junction_arc + 10.0;
    while arc < total {
        points.push(point_at_arc_len(main_line, arc));
        arc += 10.0;
    }
    points.push(*main_line.last().unwrap());
    points.dedup_by(|a, b| a == b);
    Lane {
        centerline: points,
        width: ROAD_WIDTH,
    }
}

/// A road crossing the main lane roughly at right angles; the crossing
/// vehicle travels from the `-side` flank toward `+side`.
fn crossing_lane(main: &Lane, side: f64, rng: &mut ChaCha8Rng) -> Lane {
    let junction_arc = rng.gen_range(60.0..90.0);
    let main_line = &main.centerline;
    let j = point_at_arc_len(main_line, junction_arc);
    let jt = tangent_at_arc_len(main_line, junction_arc);
    let across = jt.perp() * side;
    let reach: f64 = rng.gen_range(55.0..80.0);
    let n = (2.0 * reach / 10.0).ceil() as usize;
    Lane {
        centerline: (0..=n)
            .map(|i| j - across * reach + across * (2.0 * reach * i as f64 / n as f64))
            .collect(),
        width: ROAD_WIDTH,
    }
}

/// A background vehicle placed on `lane` at `arc`, replaying a
/// lane-keeping rollout for the whole horizon.
fn lane_follower(
    map: &MapModel,
    lane: usize,
    arc: f64,
    index: usize,
    speed: std::ops::Range<f64>,
    env: &RolloutEnv<'_>,
    rng: &mut ChaCha8Rng,
) -> Participant {
    let line = &map.lanes[lane].centerline;
    let arc = arc.min(polyline_length(line) - 10.0).max(0.0);
    let pos = point_at_arc_len(line, arc);
    let tangent = tangent_at_arc_len(line, arc);
    let start = VehicleState {
        position: pos,
        heading: wrap_angle(tangent.y.atan2(tangent.x)),
        speed: rng.gen_range(speed),
        length: rng.gen_range(4.2..4.8),
        width: rng.gen_range(1.8..2.0),
    };
    let mut states = vec![start];
    let rolled = rollout_maneuver(&start, Maneuver::KeepLane { speed_factor: 1.0 }, HORIZON, DT, env);
    states.extend(rolled.states);
    Participant {
        id: format!("bv{index}"),
        trajectory: Trajectory { states, dt: DT },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;
    use crate::sim::{kinematically_feasible, Environment, SensorMask, SimConfig};

    #[test]
    fn four_hundred_scenarios_validate_and_round_trip() {
        let corpus = generate_corpus(400, 7);
        assert_eq!(corpus.len(), 400);
        for s in &corpus {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.id));
            assert!(s.map.is_on_road(s.ego_start.position), "{} ego off-road", s.id);
            let loaded = load_scenario(&crate::scenario::save_scenario(s)).unwrap();
            assert_eq!(&loaded, s);
        }
    }

    #[test]
    fn generation_is_deterministic_in_seed_and_index() {
        let a = generate_scenario(CorpusKind::Merge, 3, 11);
        let b = generate_scenario(CorpusKind::Merge, 3, 11);
        assert_eq!(a, b);
        let c = generate_scenario(CorpusKind::Merge, 3, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn traffic_is_kinematically_feasible() {
        let params = VehicleParams::default();
        for s in generate_corpus(8, 3) {
            for p in &s.participants {
                for w in p.trajectory.states.windows(2) {
                    assert!(
                        kinematically_feasible(&w[0], &w[1], &params, DT, 1e-9),
                        "{} participant {}",
                        s.id,
                        p.id
                    );
                }
            }
        }
    }

    #[test]
    fn scenarios_reset_cleanly_in_the_environment() {
        let mut env = Environment::new(SimConfig::default());
        for s in generate_corpus(8, 5) {
            env.reset(&s, &SensorMask::none(), 0)
                .unwrap_or_else(|e| panic!("{}: {e}", s.id));
        }
    }
}
