//! Adversarial scenario selection: score every (background vehicle,
//! candidate future) pair against the buffered agent responses and the
//! current insights, pick the argmax, and splice the winning future into
//! the scenario.
//!
//! A candidate's score is its prior probability times the sum, over
//! buffered rollouts and future steps, of the rollout's shift-normalized
//! cumulative action probability times the time-decayed alignment
//! probability. Alignment at step `t` is `lambda^t` when the boxes
//! overlap and the background vehicle sits in a flagged region, else 0.

use crate::buffer::{normalized_step_probs, BehaviorBuffer, Rollout};
use crate::prior::{
    generate_candidates, CandidateTrajectory, HistoryContext, Maneuver, PriorError,
};
use crate::scenario::{
    obb_intersects, relative_position, CriticalArea, Origin, Scenario, Trajectory, VehicleState,
};
use crate::sim::VehicleParams;
use crate::analysis::Insights;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("scenario has no background vehicles")]
    NoBackgroundVehicles,
    #[error(transparent)]
    Prior(#[from] PriorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Time decay of the alignment probability, in (0, 1).
    pub lambda: f64,
    /// Candidate futures per background vehicle.
    pub candidates_per_bv: usize,
    /// History/future boundary in steps.
    pub split_step: usize,
    /// Evaluate only the first overlapping timestep per (candidate,
    /// rollout) pair instead of every timestep.
    pub first_collision_only: bool,
    /// When every score is zero, fall back to area-agnostic collision
    /// scoring before giving up.
    pub fallback_enabled: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            lambda: 0.95,
            candidates_per_bv: 32,
            split_step: 10,
            first_collision_only: false,
            fallback_enabled: true,
        }
    }
}

/// One overlap that contributed to a score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContributingEvent {
    pub rollout_index: usize,
    /// Future step `t` (1-based from the split).
    pub step: usize,
    pub region: crate::scenario::RelativeRegion,
}

/// Score of one (background vehicle, candidate) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub bv_id: String,
    pub candidate_index: usize,
    pub score: f64,
    pub prior_prob: f64,
    pub maneuver: Maneuver,
    pub contributing: Vec<ContributingEvent>,
    /// The behavior buffer had no rollouts to respond with.
    pub no_response: bool,
}

/// The chosen candidate, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedCandidate {
    pub bv_id: String,
    pub candidate_index: usize,
    pub score: f64,
    pub prior_prob: f64,
    pub maneuver: Maneuver,
    /// Earliest contributing overlap (lowest step, then lowest rollout).
    pub first_event: Option<ContributingEvent>,
}

/// Everything the selection decided, for logs and offline inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub scenario_id: String,
    pub split_step: usize,
    pub scores: Vec<ScoredCandidate>,
    pub winner: Option<SelectedCandidate>,
    /// Winner came from area-agnostic fallback scoring.
    pub fallback: bool,
    /// No candidate produced any overlap; the original scenario was
    /// returned untouched.
    pub generation_failed: bool,
}

/// Source of candidate futures; the production implementation is the
/// rule-based maneuver prior, tests may inject fixed candidate sets.
pub trait CandidateSource {
    fn candidates(
        &self,
        ctx: &HistoryContext<'_>,
        k: usize,
    ) -> Result<Vec<CandidateTrajectory>, PriorError>;
}

/// The default candidate source.
pub struct ManeuverPrior {
    pub params: VehicleParams,
}

impl CandidateSource for ManeuverPrior {
    fn candidates(
        &self,
        ctx: &HistoryContext<'_>,
        k: usize,
    ) -> Result<Vec<CandidateTrajectory>, PriorError> {
        generate_candidates(ctx, k, &self.params)
    }
}

/// Time-decayed alignment probability at future step `t >= 1`:
/// `lambda^t` when the boxes overlap and the background vehicle's region
/// is flagged, else 0. Coincident centers have no defined region and
/// score 0.
pub fn alignment_probability(
    t: usize,
    av: &VehicleState,
    bv: &VehicleState,
    area: &CriticalArea,
    lambda: f64,
) -> f64 {
    debug_assert!(t >= 1);
    if !obb_intersects(av, bv) {
        return 0.0;
    }
    match relative_position(av, bv) {
        Ok(region) if area.contains(region) => lambda.powi(t as i32),
        _ => 0.0,
    }
}

/// Score one candidate against a set of buffered rollouts.
///
/// Future step `t` lines up with absolute rollout step `split + t`; the
/// evaluation horizon is the shorter of the candidate future and what
/// the rollout actually recorded.
pub fn score_candidate(
    candidate: &CandidateTrajectory,
    rollouts: &[&Rollout],
    insights: &Insights,
    cfg: &GeneratorConfig,
    bv_id: &str,
    candidate_index: usize,
) -> ScoredCandidate {
    let probs = normalized_step_probs(rollouts);
    score_candidate_inner(
        candidate,
        rollouts,
        &probs,
        Some(&insights.critical_area),
        cfg,
        bv_id,
        candidate_index,
        true,
    )
}

/// The scoring loop; `area = None` is the area-agnostic fallback, which
/// also drops the prior factor.
#[allow(clippy::too_many_arguments)]
fn score_candidate_inner(
    candidate: &CandidateTrajectory,
    rollouts: &[&Rollout],
    probs: &[Vec<f64>],
    area: Option<&CriticalArea>,
    cfg: &GeneratorConfig,
    bv_id: &str,
    candidate_index: usize,
    use_prior: bool,
) -> ScoredCandidate {
    let mut total = 0.0;
    let mut contributing = Vec::new();
    for (j, rollout) in rollouts.iter().enumerate() {
        for t in 1..=candidate.future.states.len() {
            let abs = cfg.split_step + t;
            let Some(step) = rollout.steps.get(abs) else {
                break;
            };
            let bv_state = &candidate.future.states[t - 1];
            let overlap = obb_intersects(&step.state, bv_state);
            if overlap {
                if let Ok(region) = relative_position(&step.state, bv_state) {
                    if area.map_or(true, |a| a.contains(region)) {
                        total += probs[j][abs] * cfg.lambda.powi(t as i32);
                        contributing.push(ContributingEvent {
                            rollout_index: j,
                            step: t,
                            region,
                        });
                    }
                }
            }
            if overlap && cfg.first_collision_only {
                break;
            }
        }
    }
    ScoredCandidate {
        bv_id: bv_id.to_string(),
        candidate_index,
        score: if use_prior { candidate.prior_prob * total } else { total },
        prior_prob: candidate.prior_prob,
        maneuver: candidate.maneuver,
        contributing,
        no_response: rollouts.is_empty(),
    }
}

/// `a` beats `b` under the documented tie-break: higher score, then
/// higher prior, then lower background-vehicle id, then lower candidate
/// index.
fn beats(a: &ScoredCandidate, b: &ScoredCandidate) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.prior_prob != b.prior_prob {
        return a.prior_prob > b.prior_prob;
    }
    (a.bv_id.as_str(), a.candidate_index) < (b.bv_id.as_str(), b.candidate_index)
}

/// Run the full selection over all background vehicles and candidates,
/// returning the scenario with the winning future spliced in (or the
/// original scenario when generation failed) plus the selection report.
pub fn select_optimal(
    scenario: &Scenario,
    buffer: &BehaviorBuffer,
    insights: &Insights,
    prior: &dyn CandidateSource,
    cfg: &GeneratorConfig,
) -> Result<(Scenario, SelectionReport), GenerationError> {
    if scenario.participants.is_empty() {
        return Err(GenerationError::NoBackgroundVehicles);
    }
    let rollouts = buffer.sample_responses(&scenario.id);
    let probs = normalized_step_probs(&rollouts);

    // The agent history fed to the prior: the latest buffered rollout,
    // falling back to the scenario start pose when the buffer is empty.
    let av_history: Vec<VehicleState> = match rollouts.last() {
        Some(r) => r
            .steps
            .iter()
            .take(cfg.split_step + 1)
            .map(|s| s.state)
            .collect(),
        None => vec![scenario.ego_start],
    };

    let mut all_candidates: Vec<(usize, CandidateTrajectory)> = Vec::new();
    let mut scores: Vec<ScoredCandidate> = Vec::new();
    for (bv_idx, participant) in scenario.participants.iter().enumerate() {
        let bv_history: Vec<VehicleState> =
            (0..=cfg.split_step).map(|k| *participant.state_at(k)).collect();
        let ctx = HistoryContext {
            map: &scenario.map,
            av_history: &av_history,
            bv_history: &bv_history,
            split_step: cfg.split_step,
            horizon: scenario.horizon,
            dt: scenario.dt,
        };
        let candidates = prior.candidates(&ctx, cfg.candidates_per_bv)?;
        for (idx, candidate) in candidates.into_iter().enumerate() {
            scores.push(score_candidate_inner(
                &candidate,
                &rollouts,
                &probs,
                Some(&insights.critical_area),
                cfg,
                &participant.id,
                idx,
                true,
            ));
            all_candidates.push((bv_idx, candidate));
        }
    }

    let mut winner_pos = best_position(&scores, |s| s.score > 0.0);
    let mut fallback = false;
    if winner_pos.is_none() && cfg.fallback_enabled {
        // Area-agnostic rescue: any overlap counts, prior dropped.
        let fallback_scores: Vec<ScoredCandidate> = scores
            .iter()
            .zip(&all_candidates)
            .map(|(s, (_, cand))| {
                score_candidate_inner(
                    cand,
                    &rollouts,
                    &probs,
                    None,
                    cfg,
                    &s.bv_id,
                    s.candidate_index,
                    false,
                )
            })
            .collect();
        if let Some(pos) = best_position(&fallback_scores, |s| s.score > 0.0) {
            winner_pos = Some(pos);
            fallback = true;
            scores = fallback_scores;
        }
    }

    let Some(pos) = winner_pos else {
        return Ok((
            scenario.clone(),
            SelectionReport {
                scenario_id: scenario.id.clone(),
                split_step: cfg.split_step,
                scores,
                winner: None,
                fallback: false,
                generation_failed: true,
            },
        ));
    };

    let chosen = &scores[pos];
    let (bv_idx, candidate) = &all_candidates[pos];
    let first_event = chosen
        .contributing
        .iter()
        .copied()
        .min_by_key(|e| (e.step, e.rollout_index));

    let mut generated = scenario.clone();
    let participant = &mut generated.participants[*bv_idx];
    let mut states: Vec<VehicleState> =
        (0..=cfg.split_step).map(|k| *participant.state_at(k)).collect();
    states.extend(candidate.future.states.iter().copied());
    participant.trajectory = Trajectory {
        states,
        dt: scenario.dt,
    };
    generated.origin = Origin::Generated;

    let report = SelectionReport {
        scenario_id: scenario.id.clone(),
        split_step: cfg.split_step,
        winner: Some(SelectedCandidate {
            bv_id: chosen.bv_id.clone(),
            candidate_index: chosen.candidate_index,
            score: chosen.score,
            prior_prob: chosen.prior_prob,
            maneuver: chosen.maneuver,
            first_event,
        }),
        scores,
        fallback,
        generation_failed: false,
    };
    Ok((generated, report))
}

fn best_position(scores: &[ScoredCandidate], admit: impl Fn(&ScoredCandidate) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if !admit(s) {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if beats(s, &scores[b]) => best = Some(i),
            _ => {}
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{Insights, Provenance};
    use crate::buffer::Rollout;
    use crate::geom::Vec2;
    use crate::scenario::{Lane, MapModel, Participant, RelativeRegion};
    use crate::sim::Action;

    fn state(x: f64, y: f64) -> VehicleState {
        VehicleState {
            position: Vec2::new(x, y),
            heading: 0.0,
            speed: 0.0,
            length: 4.0,
            width: 2.0,
        }
    }

    fn insights(regions: impl IntoIterator<Item = RelativeRegion>) -> Insights {
        Insights {
            situation: "s".into(),
            reasoning: "r".into(),
            recommendation: "c".into(),
            critical_area: CriticalArea::new(regions).unwrap(),
            provenance: Provenance::Stub,
            created_at_step: 0,
        }
    }

    #[test]
    fn alignment_probability_cases() {
        let area = CriticalArea::single(RelativeRegion::Front);
        let av = state(0.0, 0.0);
        // No overlap.
        assert_eq!(alignment_probability(3, &av, &state(30.0, 0.0), &area, 0.9), 0.0);
        // Overlap but wrong region.
        let behind = CriticalArea::single(RelativeRegion::Behind);
        assert_eq!(alignment_probability(3, &av, &state(2.0, 0.0), &behind, 0.9), 0.0);
        // Overlap, aligned region, t = 3.
        let p = alignment_probability(3, &av, &state(2.0, 0.0), &area, 0.9);
        assert!((p - 0.729).abs() < 1e-12, "{p}");
    }

    /// Rollout whose normalized probability is 1 everywhere except
    /// `target_abs`, where it is `p`.
    fn rollout_with_prob_at(id: &str, len: usize, target_abs: usize, p: f64) -> Rollout {
        Rollout::from_steps(
            id,
            (0..len).map(|k| {
                let lp = if k == target_abs {
                    p.ln()
                } else if k == target_abs + 1 {
                    -p.ln()
                } else {
                    0.0
                };
                (state(0.0, 0.0), Action::new(0.0, 0.0), lp)
            }),
        )
    }

    fn candidate_hitting_at(t_hit: usize, len: usize, prior: f64) -> CandidateTrajectory {
        let states = (1..=len)
            .map(|t| {
                if t == t_hit {
                    state(1.0, 0.0)
                } else {
                    state(500.0, 500.0)
                }
            })
            .collect();
        CandidateTrajectory {
            future: Trajectory {
                states,
                dt: 0.1,
            },
            prior_prob: prior,
            maneuver: Maneuver::KeepLane { speed_factor: 1.0 },
        }
    }

    #[test]
    fn hand_computed_score_matches() {
        let cfg = GeneratorConfig {
            lambda: 0.9,
            split_step: 2,
            ..GeneratorConfig::default()
        };
        // Aligned overlap only at future step t = 3 (absolute step 5)
        // where the normalized cumulative probability is 0.5.
        let rollout = rollout_with_prob_at("s", 12, 5, 0.5);
        let candidate = candidate_hitting_at(3, 8, 0.2);
        let scored = score_candidate(
            &candidate,
            &[&rollout],
            &insights([RelativeRegion::Front]),
            &cfg,
            "bv0",
            0,
        );
        assert!((scored.score - 0.2 * 0.5 * 0.729).abs() < 1e-12, "{}", scored.score);
        assert_eq!(scored.contributing.len(), 1);
        assert_eq!(scored.contributing[0].step, 3);
        assert_eq!(scored.contributing[0].region, RelativeRegion::Front);
    }

    #[test]
    fn score_is_linear_in_the_prior() {
        let cfg = GeneratorConfig {
            lambda: 0.9,
            split_step: 2,
            ..GeneratorConfig::default()
        };
        let rollout = rollout_with_prob_at("s", 12, 5, 0.5);
        let one = score_candidate(
            &candidate_hitting_at(3, 8, 0.2),
            &[&rollout],
            &insights([RelativeRegion::Front]),
            &cfg,
            "bv0",
            0,
        );
        let two = score_candidate(
            &candidate_hitting_at(3, 8, 0.4),
            &[&rollout],
            &insights([RelativeRegion::Front]),
            &cfg,
            "bv0",
            0,
        );
        assert!((two.score - 2.0 * one.score).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_scores_zero_and_empty_buffer_flags_no_response() {
        let cfg = GeneratorConfig::default();
        let rollout = rollout_with_prob_at("s", 30, 5, 0.5);
        let far = candidate_hitting_at(usize::MAX, 8, 0.3);
        let scored = score_candidate(
            &far,
            &[&rollout],
            &insights([RelativeRegion::Front]),
            &cfg,
            "bv0",
            0,
        );
        assert_eq!(scored.score, 0.0);
        assert!(scored.contributing.is_empty());
        assert!(!scored.no_response);

        let scored = score_candidate(&far, &[], &insights([RelativeRegion::Front]), &cfg, "bv0", 0);
        assert_eq!(scored.score, 0.0);
        assert!(scored.no_response);
    }

    #[test]
    fn adding_a_rollout_never_decreases_scores_under_a_fixed_shift() {
        let cfg = GeneratorConfig {
            lambda: 0.9,
            split_step: 2,
            ..GeneratorConfig::default()
        };
        let candidate = candidate_hitting_at(3, 8, 0.2);
        let area = insights([RelativeRegion::Front]);
        let r1 = rollout_with_prob_at("s", 12, 5, 0.5);
        // The extra rollout's cumulative log probabilities stay at or
        // below the existing maximum, so the shift is unchanged; a new
        // maximum would rescale every candidate by the same factor, which
        // the argmax ignores.
        let r2 = rollout_with_prob_at("s", 12, 5, 0.25);
        let base = score_candidate(&candidate, &[&r1], &area, &cfg, "bv0", 0);
        let more = score_candidate(&candidate, &[&r1, &r2], &area, &cfg, "bv0", 0);
        assert!(more.score >= base.score);
        assert!((more.score - base.score - 0.2 * 0.25 * 0.729).abs() < 1e-12);
    }

    struct FixedCandidates(Vec<CandidateTrajectory>);

    impl CandidateSource for FixedCandidates {
        fn candidates(
            &self,
            _ctx: &HistoryContext<'_>,
            k: usize,
        ) -> Result<Vec<CandidateTrajectory>, PriorError> {
            Ok(self.0.iter().take(k).cloned().collect())
        }
    }

    fn one_bv_scenario() -> Scenario {
        let bv_states: Vec<VehicleState> = (0..40).map(|_| state(100.0, 0.0)).collect();
        Scenario {
            id: "gen-test".to_string(),
            dt: 0.1,
            horizon: 10,
            map: MapModel {
                lanes: vec![Lane {
                    centerline: vec![Vec2::new(-10.0, 0.0), Vec2::new(600.0, 0.0)],
                    width: 600.0,
                }],
            },
            ego_start: state(0.0, 0.0),
            ego_route: vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)],
            participants: vec![Participant {
                id: "bv0".to_string(),
                trajectory: Trajectory {
                    states: bv_states,
                    dt: 0.1,
                },
            }],
            origin: Origin::Regular,
        }
    }

    #[test]
    fn singleton_selection_replaces_only_the_winning_suffix() {
        let scenario = one_bv_scenario();
        let cfg = GeneratorConfig {
            lambda: 0.9,
            split_step: 2,
            candidates_per_bv: 1,
            ..GeneratorConfig::default()
        };
        let mut buffer = BehaviorBuffer::new(3);
        buffer.record_rollout(rollout_with_prob_at("gen-test", 12, 5, 0.5));
        let prior = FixedCandidates(vec![candidate_hitting_at(3, 8, 1.0)]);
        let (generated, report) =
            select_optimal(&scenario, &buffer, &insights([RelativeRegion::Front]), &prior, &cfg)
                .unwrap();
        assert!(!report.fallback && !report.generation_failed);
        let winner = report.winner.unwrap();
        assert_eq!(winner.bv_id, "bv0");
        assert_eq!(generated.origin, Origin::Generated);
        assert!(generated.validate().is_ok());
        // History preserved, future replaced.
        let new_states = &generated.participants[0].trajectory.states;
        assert_eq!(new_states[..=cfg.split_step], scenario.participants[0].trajectory.states[..=cfg.split_step]);
        assert_eq!(new_states.len(), cfg.split_step + 1 + 8);
        assert_eq!(new_states[cfg.split_step + 3], state(1.0, 0.0));
    }

    #[test]
    fn area_mismatch_falls_back_and_no_overlap_fails_out() {
        let scenario = one_bv_scenario();
        let cfg = GeneratorConfig {
            lambda: 0.9,
            split_step: 2,
            candidates_per_bv: 1,
            ..GeneratorConfig::default()
        };
        let mut buffer = BehaviorBuffer::new(3);
        buffer.record_rollout(rollout_with_prob_at("gen-test", 12, 5, 0.5));

        // Overlap happens in Front but the flagged area is Behind:
        // area-aware score is zero, fallback catches the overlap.
        let prior = FixedCandidates(vec![candidate_hitting_at(3, 8, 1.0)]);
        let (_, report) =
            select_optimal(&scenario, &buffer, &insights([RelativeRegion::Behind]), &prior, &cfg)
                .unwrap();
        assert!(report.fallback);
        assert!(!report.generation_failed);
        assert!(report.winner.is_some());

        // No candidate ever overlaps: generation fails, scenario passes
        // through untouched.
        let prior = FixedCandidates(vec![candidate_hitting_at(usize::MAX, 8, 1.0)]);
        let (unchanged, report) =
            select_optimal(&scenario, &buffer, &insights([RelativeRegion::Front]), &prior, &cfg)
                .unwrap();
        assert!(report.generation_failed);
        assert!(report.winner.is_none());
        assert_eq!(unchanged, scenario);

        // No background vehicles at all is an error.
        let mut empty = scenario.clone();
        empty.participants.clear();
        assert!(matches!(
            select_optimal(&empty, &buffer, &insights([RelativeRegion::Front]), &prior, &cfg),
            Err(GenerationError::NoBackgroundVehicles)
        ));
    }

    #[test]
    fn tie_break_prefers_higher_prior_then_lower_ids() {
        let a = ScoredCandidate {
            bv_id: "a".into(),
            candidate_index: 1,
            score: 1.0,
            prior_prob: 0.5,
            maneuver: Maneuver::KeepLane { speed_factor: 1.0 },
            contributing: vec![],
            no_response: false,
        };
        let mut b = a.clone();
        b.prior_prob = 0.6;
        assert!(beats(&b, &a));
        let mut c = a.clone();
        c.bv_id = "b".into();
        assert!(beats(&a, &c));
        let mut d = a.clone();
        d.candidate_index = 0;
        assert!(beats(&d, &a));
    }
}
