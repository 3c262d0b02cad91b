//! Dual-phase evaluation: regular replay and adversarially transformed
//! scenarios, plus transfer-rate bookkeeping and the perception-masking
//! alignment experiment.

use crate::agent::{AgentError, Td3Agent};
use crate::analysis::{Insights, Provenance};
use crate::buffer::{BehaviorBuffer, Rollout};
use crate::generator::{select_optimal, GenerationError, GeneratorConfig, ManeuverPrior};
use crate::geom::Vec2;
use crate::scenario::{CriticalArea, RelativeRegion, Scenario};
use crate::scenario::spatial::classify_bearing;
use crate::sim::{Environment, EpisodeLogRecord, SensorMask, SimConfig, SimError};
use crate::trainer::{TrainError, TrainRunConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("scenario id sets differ between reports: {0}")]
    ScenarioSetMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalPhase {
    Regular,
    SafetyCritical,
}

/// Per-scenario evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario_id: String,
    pub crashed: bool,
    pub off_road: bool,
    pub arrived: bool,
    pub timeout: bool,
    /// Arrived without crash or road departure.
    pub success: bool,
    pub reward: f64,
    pub completion: f64,
    /// Meters traveled by the agent.
    pub distance_m: f64,
    pub mean_speed: f64,
    /// Safety-critical phase only: generation fell back to area-agnostic
    /// scoring / failed outright (scenario ran unmodified).
    pub generation_fallback: Option<bool>,
    pub generation_failed: Option<bool>,
}

/// Aggregates over a report, always recomputable from the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub crash_rate_pct: f64,
    pub road_completion_pct: f64,
    pub mean_distance_m: f64,
    pub mean_speed: f64,
    pub mean_episode_reward: f64,
    pub success_rate_pct: f64,
}

impl Aggregates {
    pub fn from_records(records: &[ScenarioOutcome]) -> Aggregates {
        let n = records.len().max(1) as f64;
        Aggregates {
            episodes: records.len(),
            crash_rate_pct: records.iter().filter(|r| r.crashed).count() as f64 / n * 100.0,
            road_completion_pct: records.iter().map(|r| r.completion).sum::<f64>() / n * 100.0,
            mean_distance_m: records.iter().map(|r| r.distance_m).sum::<f64>() / n,
            mean_speed: records.iter().map(|r| r.mean_speed).sum::<f64>() / n,
            mean_episode_reward: records.iter().map(|r| r.reward).sum::<f64>() / n,
            success_rate_pct: records.iter().filter(|r| r.success).count() as f64 / n * 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub phase: EvalPhase,
    pub seed: u64,
    pub records: Vec<ScenarioOutcome>,
    pub aggregates: Aggregates,
    /// Fraction of safety-critical scenarios where generation fell back
    /// or failed; never silently folded into the aggregates.
    pub fallback_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub sim: SimConfig,
    pub generator: GeneratorConfig,
    pub mask: SensorMask,
    /// Exploratory rollouts recorded per scenario to approximate the
    /// agent's response distribution before generation (safety phase).
    pub bootstrap_rollouts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sim: SimConfig::default(),
            generator: GeneratorConfig::default(),
            mask: SensorMask::none(),
            bootstrap_rollouts: 2,
        }
    }
}

/// Evaluate the policy over a corpus. Regular phase replays scenarios as
/// stored; the safety-critical phase first transforms each scenario with
/// the generator (bootstrapping a response buffer from the current
/// policy), then executes the result. Deterministic in `(policy, seed)`.
pub fn evaluate(
    agent: &Td3Agent,
    corpus: &[Scenario],
    phase: EvalPhase,
    insights: Option<&Insights>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut env = Environment::new(cfg.sim.clone());
    let mut records = Vec::with_capacity(corpus.len());
    for scenario in corpus {
        let scenario_seed = seed ^ fnv1a(scenario.id.as_bytes());
        let record = match phase {
            EvalPhase::Regular => {
                run_scenario(agent, &mut env, scenario, &cfg.mask, scenario_seed, None)?
            }
            EvalPhase::SafetyCritical => {
                // The generator scores candidates against recent policy
                // responses; absent insights, fall back to flagging
                // every region.
                let all_regions = Insights {
                    situation: "evaluation fallback".to_string(),
                    reasoning: "no insights supplied".to_string(),
                    recommendation: "score collisions in every region".to_string(),
                    critical_area: CriticalArea::new(RelativeRegion::ALL).unwrap(),
                    provenance: Provenance::Stub,
                    created_at_step: 0,
                };
                let insights = insights.unwrap_or(&all_regions);
                let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed);
                let mut buffer = BehaviorBuffer::new(cfg.bootstrap_rollouts.max(1));
                for _ in 0..cfg.bootstrap_rollouts {
                    let rollout = record_rollout(agent, &mut env, scenario, &cfg.mask, &mut rng)?;
                    buffer.record_rollout(rollout);
                }
                let prior = ManeuverPrior {
                    params: cfg.sim.vehicle,
                };
                let (generated, report) =
                    select_optimal(scenario, &buffer, insights, &prior, &cfg.generator)?;
                let mut record = run_scenario(
                    agent,
                    &mut env,
                    &generated,
                    &cfg.mask,
                    scenario_seed,
                    Some(scenario.id.clone()),
                )?;
                record.generation_fallback = Some(report.fallback);
                record.generation_failed = Some(report.generation_failed);
                record
            }
        };
        records.push(record);
    }
    let fallback_fraction = match phase {
        EvalPhase::Regular => None,
        EvalPhase::SafetyCritical => Some(
            records
                .iter()
                .filter(|r| r.generation_fallback == Some(true) || r.generation_failed == Some(true))
                .count() as f64
                / records.len() as f64,
        ),
    };
    Ok(EvalReport {
        phase,
        seed,
        aggregates: Aggregates::from_records(&records),
        records,
        fallback_fraction,
    })
}

/// One deterministic episode with the noise-free policy.
fn run_scenario(
    agent: &Td3Agent,
    env: &mut Environment,
    scenario: &Scenario,
    mask: &SensorMask,
    seed: u64,
    report_id: Option<String>,
) -> Result<ScenarioOutcome, EvalError> {
    let mut obs = env.reset(scenario, mask, seed)?.to_vec();
    let mut reward = 0.0;
    let mut distance = 0.0;
    let mut speed_sum = 0.0;
    let mut steps = 0usize;
    let flags = loop {
        let sample = agent.act_deterministic(&obs)?;
        let out = env.step(sample.action)?;
        obs = out.observation.to_vec();
        reward += out.reward;
        distance += env.ego_state().speed * scenario.dt;
        speed_sum += env.ego_state().speed;
        steps += 1;
        if out.done {
            break out.flags;
        }
    };
    let success = flags.arrived && !flags.crashed && !flags.off_road;
    Ok(ScenarioOutcome {
        scenario_id: report_id.unwrap_or_else(|| scenario.id.clone()),
        crashed: flags.crashed,
        off_road: flags.off_road,
        arrived: flags.arrived,
        timeout: flags.timeout,
        success,
        reward,
        completion: env.route_fraction(),
        distance_m: distance,
        mean_speed: speed_sum / steps.max(1) as f64,
        generation_fallback: None,
        generation_failed: None,
    })
}

/// One exploratory episode recorded as a behavior-buffer rollout.
fn record_rollout(
    agent: &Td3Agent,
    env: &mut Environment,
    scenario: &Scenario,
    mask: &SensorMask,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, EvalError> {
    let mut obs = env.reset(scenario, mask, rng.gen())?.to_vec();
    let mut steps = Vec::new();
    loop {
        let state = *env.ego_state();
        let sample = agent.act_with_rng(&obs, rng)?;
        let out = env.step(sample.action)?;
        steps.push((state, sample.action, sample.log_density));
        obs = out.observation.to_vec();
        if out.done {
            break;
        }
    }
    Ok(Rollout::from_steps(scenario.id.clone(), steps))
}

/// Learning-effectiveness rates between two paired reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRates {
    /// Previously failed scenarios now succeeding, percent; `None` when
    /// nothing failed before.
    pub failure_to_success_pct: Option<f64>,
    /// Previously succeeding scenarios still succeeding, percent; `None`
    /// when nothing succeeded before.
    pub success_to_success_pct: Option<f64>,
    pub failed_before: usize,
    pub succeeded_before: usize,
}

/// Pure set computation over the two reports' records; the scenario id
/// sets must match exactly.
pub fn transfer_rates(before: &EvalReport, after: &EvalReport) -> Result<TransferRates, EvalError> {
    let ids = |r: &EvalReport| -> BTreeSet<String> {
        r.records.iter().map(|x| x.scenario_id.clone()).collect()
    };
    let (b, a) = (ids(before), ids(after));
    if b != a {
        let missing: Vec<_> = b.symmetric_difference(&a).cloned().collect();
        return Err(EvalError::ScenarioSetMismatch(missing.join(", ")));
    }
    let success_after: BTreeSet<&str> = after
        .records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.scenario_id.as_str())
        .collect();
    let (mut failed_before, mut fixed) = (0usize, 0usize);
    let (mut succeeded_before, mut kept) = (0usize, 0usize);
    for rec in &before.records {
        if rec.success {
            succeeded_before += 1;
            kept += success_after.contains(rec.scenario_id.as_str()) as usize;
        } else {
            failed_before += 1;
            fixed += success_after.contains(rec.scenario_id.as_str()) as usize;
        }
    }
    let pct = |num: usize, den: usize| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64 * 100.0)
        }
    };
    Ok(TransferRates {
        failure_to_success_pct: pct(fixed, failed_before),
        success_to_success_pct: pct(kept, succeeded_before),
        failed_before,
        succeeded_before,
    })
}

/// 2D histogram over ego-frame positions, 1 m bins spanning
/// `[-extent, extent]` on both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionHeatmap {
    pub extent: f64,
    pub bins_per_axis: usize,
    pub counts: Vec<u32>,
    pub total: u64,
}

impl PositionHeatmap {
    pub fn new() -> Self {
        PositionHeatmap {
            extent: 30.0,
            bins_per_axis: 60,
            counts: vec![0; 60 * 60],
            total: 0,
        }
    }

    pub fn add(&mut self, p: Vec2) {
        let half = self.extent;
        let scale = self.bins_per_axis as f64 / (2.0 * half);
        let ix = (((p.x + half) * scale).floor() as isize).clamp(0, self.bins_per_axis as isize - 1);
        let iy = (((p.y + half) * scale).floor() as isize).clamp(0, self.bins_per_axis as isize - 1);
        self.counts[iy as usize * self.bins_per_axis + ix as usize] += 1;
        self.total += 1;
    }

    pub fn count(&self, ix: usize, iy: usize) -> u32 {
        self.counts[iy * self.bins_per_axis + ix]
    }

    /// Sector (by the quadrant rule) holding the most mass.
    pub fn modal_sector(&self) -> Option<RelativeRegion> {
        let mut mass = std::collections::BTreeMap::new();
        let half = self.extent;
        let bin = 2.0 * half / self.bins_per_axis as f64;
        for iy in 0..self.bins_per_axis {
            for ix in 0..self.bins_per_axis {
                let c = self.count(ix, iy);
                if c == 0 {
                    continue;
                }
                let x = -half + (ix as f64 + 0.5) * bin;
                let y = -half + (iy as f64 + 0.5) * bin;
                if x == 0.0 && y == 0.0 {
                    continue;
                }
                *mass.entry(classify_bearing(y.atan2(x))).or_insert(0u64) += c as u64;
            }
        }
        mass.into_iter().max_by_key(|&(_, c)| c).map(|(r, _)| r)
    }

    /// CSV dump: bin lower corners, raw count and log intensity.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_low,y_low,count,log_intensity\n");
        let half = self.extent;
        let bin = 2.0 * half / self.bins_per_axis as f64;
        for iy in 0..self.bins_per_axis {
            for ix in 0..self.bins_per_axis {
                let c = self.count(ix, iy);
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    -half + ix as f64 * bin,
                    -half + iy as f64 * bin,
                    c,
                    (1.0 + c as f64).ln(),
                ));
            }
        }
        out
    }
}

impl Default for PositionHeatmap {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingConfig {
    /// Sectors to blind; also pinned as the analyzer's critical area.
    pub regions: Vec<RelativeRegion>,
    /// Generated episodes required before stopping.
    pub min_generated: usize,
    /// Hard step budget for the run.
    pub max_steps: usize,
    pub train: TrainRunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingOutcome {
    pub heatmap: PositionHeatmap,
    /// Fraction of non-fallback replay overlaps landing in the masked
    /// sector(s).
    pub alignment_fraction: f64,
    pub generated_episodes: usize,
    pub non_fallback_overlaps: usize,
    pub aligned_overlaps: usize,
    /// Generated episodes whose replay produced no overlap with the
    /// selected vehicle.
    pub no_overlap_episodes: usize,
}

/// Train an agent with blinded sectors while the analyzer is pinned to
/// those same sectors, and measure where the selected adversarial
/// vehicles actually strike during replay.
pub fn masking_alignment_experiment(
    pool: Vec<Scenario>,
    cfg: MaskingConfig,
) -> Result<MaskingOutcome, EvalError> {
    if cfg.regions.is_empty() {
        return Err(EvalError::Config("mask must name at least one region".to_string()));
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.sensor_mask = SensorMask::of(cfg.regions.iter().copied());
    train_cfg.forced_critical_area = Some(cfg.regions.clone());
    train_cfg.scheduler.total_steps = cfg.max_steps;

    let mut trainer = Trainer::new(train_cfg, pool)?;
    let mut generated = 0usize;
    while generated < cfg.min_generated && trainer.step_count() < cfg.max_steps {
        let rec = trainer.run_episode()?;
        if rec.origin == crate::scenario::Origin::Generated {
            generated += 1;
        }
    }

    let overlaps = trainer.generated_overlaps();
    if generated < 30 {
        return Err(EvalError::InsufficientData(format!(
            "only {generated} generated episodes within the step budget"
        )));
    }
    let mut heatmap = PositionHeatmap::new();
    let mut non_fallback = 0usize;
    let mut aligned = 0usize;
    for o in overlaps {
        heatmap.add(o.ego_frame);
        if !o.fallback {
            non_fallback += 1;
            aligned += cfg.regions.contains(&o.region) as usize;
        }
    }
    if non_fallback == 0 {
        return Err(EvalError::InsufficientData(
            "no non-fallback overlap events recorded".to_string(),
        ));
    }
    Ok(MaskingOutcome {
        heatmap,
        alignment_fraction: aligned as f64 / non_fallback as f64,
        generated_episodes: generated,
        non_fallback_overlaps: non_fallback,
        aligned_overlaps: aligned,
        no_overlap_episodes: trainer.generated_without_overlap(),
    })
}

/// Deterministic replay that dumps one top-down frame per step and the
/// episode log; returns the per-step records.
pub fn replay_frames(
    agent: &Td3Agent,
    scenario: &Scenario,
    cfg: &EvalConfig,
    frames_dir: &std::path::Path,
) -> Result<Vec<EpisodeLogRecord>, EvalError> {
    std::fs::create_dir_all(frames_dir)?;
    let mut env = Environment::new(cfg.sim.clone());
    let mut obs = env.reset(scenario, &cfg.mask, 0)?.to_vec();
    let mut records = Vec::new();
    loop {
        let sample = agent.act_deterministic(&obs)?;
        let out = env.step(sample.action)?;
        obs = out.observation.to_vec();
        let img = crate::analysis::render::render_frame(
            &scenario.map,
            env.ego_state(),
            &env.bv_states(),
        );
        img.save(frames_dir.join(format!("frame_{:05}.png", env.step_index())))
            .map_err(|e| EvalError::Io(std::io::Error::other(e)))?;
        records.push(EpisodeLogRecord {
            t: env.step_index(),
            state: *env.ego_state(),
            action: sample.action,
            reward: out.reward,
            flags: out.flags,
        });
        if out.done {
            break;
        }
    }
    Ok(records)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::trainer::corpus::generate_corpus;

    fn frozen_agent(rays: usize) -> Td3Agent {
        Td3Agent::new(
            crate::sim::Observation::dim_for(rays),
            AgentConfig {
                hidden: vec![8],
                ..AgentConfig::default()
            },
            5,
        )
    }

    #[test]
    fn regular_reports_are_deterministic_and_recomputable() {
        let corpus = generate_corpus(4, 2);
        let cfg = EvalConfig::default();
        let agent = frozen_agent(cfg.sim.lidar.rays);
        let a = evaluate(&agent, &corpus, EvalPhase::Regular, None, &cfg, 42).unwrap();
        let b = evaluate(&agent, &corpus, EvalPhase::Regular, None, &cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.aggregates, Aggregates::from_records(&a.records));
        assert_eq!(a.records.len(), 4);
        assert!(a.fallback_fraction.is_none());
    }

    #[test]
    fn safety_phase_reports_fallback_fraction() {
        let corpus = generate_corpus(2, 3);
        let cfg = EvalConfig {
            generator: GeneratorConfig {
                candidates_per_bv: 8,
                ..GeneratorConfig::default()
            },
            bootstrap_rollouts: 1,
            ..EvalConfig::default()
        };
        let agent = frozen_agent(cfg.sim.lidar.rays);
        let report =
            evaluate(&agent, &corpus, EvalPhase::SafetyCritical, None, &cfg, 7).unwrap();
        assert!(report.fallback_fraction.is_some());
        for rec in &report.records {
            assert!(rec.generation_fallback.is_some());
            assert!(rec.generation_failed.is_some());
        }
        // Paired ids with the regular phase.
        let regular = evaluate(&agent, &corpus, EvalPhase::Regular, None, &cfg, 7).unwrap();
        assert!(transfer_rates(&regular, &report).is_ok());
    }

    #[test]
    fn transfer_rate_arithmetic() {
        let outcome = |id: &str, success: bool| ScenarioOutcome {
            scenario_id: id.to_string(),
            crashed: !success,
            off_road: false,
            arrived: success,
            timeout: false,
            success,
            reward: 0.0,
            completion: 1.0,
            distance_m: 10.0,
            mean_speed: 5.0,
            generation_fallback: None,
            generation_failed: None,
        };
        let report = |outcomes: Vec<ScenarioOutcome>| EvalReport {
            phase: EvalPhase::Regular,
            seed: 0,
            aggregates: Aggregates::from_records(&outcomes),
            records: outcomes,
            fallback_fraction: None,
        };
        // 10 scenarios: 4 failures, 2 of them fixed; 6 successes, 5 kept.
        let before = report(
            (0..10)
                .map(|i| outcome(&format!("s{i}"), i >= 4))
                .collect(),
        );
        let after = report(
            (0..10)
                .map(|i| outcome(&format!("s{i}"), i < 2 || (i >= 4 && i != 9)))
                .collect(),
        );
        let rates = transfer_rates(&before, &after).unwrap();
        assert_eq!(rates.failure_to_success_pct, Some(50.0));
        let s2s = rates.success_to_success_pct.unwrap();
        assert!((s2s - 500.0 / 6.0).abs() < 1e-9);

        // Identity: nothing fixed, everything kept.
        let rates = transfer_rates(&before, &before).unwrap();
        assert_eq!(rates.failure_to_success_pct, Some(0.0));
        assert_eq!(rates.success_to_success_pct, Some(100.0));

        // All-fail before, all-success after: s2s undefined.
        let all_fail = report((0..3).map(|i| outcome(&format!("s{i}"), false)).collect());
        let all_good = report((0..3).map(|i| outcome(&format!("s{i}"), true)).collect());
        let rates = transfer_rates(&all_fail, &all_good).unwrap();
        assert_eq!(rates.failure_to_success_pct, Some(100.0));
        assert_eq!(rates.success_to_success_pct, None);

        // Mismatched sets error.
        let other = report(vec![outcome("zz", true)]);
        assert!(matches!(
            transfer_rates(&before, &other),
            Err(EvalError::ScenarioSetMismatch(_))
        ));
    }

    #[test]
    fn heatmap_conserves_counts_and_finds_the_modal_sector() {
        let mut map = PositionHeatmap::new();
        for i in 0..40 {
            map.add(Vec2::new(10.0 + (i % 5) as f64, (i % 7) as f64 - 3.0));
        }
        for _ in 0..8 {
            map.add(Vec2::new(-12.0, 0.5));
        }
        assert_eq!(map.total, 48);
        assert_eq!(map.counts.iter().map(|&c| c as u64).sum::<u64>(), map.total);
        assert_eq!(map.modal_sector(), Some(RelativeRegion::Front));
        let csv = map.to_csv();
        assert_eq!(csv.lines().count(), 1 + 60 * 60);
    }
}
