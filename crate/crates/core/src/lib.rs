//! A desk-scale closed-loop curriculum trainer for a 2D driving agent.
//!
//! The crate wires together a deterministic kinematic simulator, a
//! rule-based multi-modal trajectory prior, a rolling buffer of agent
//! responses, a behavioral-analysis stage (HTTP vision-language backend
//! or a deterministic geometric stub), a probability-scored adversarial
//! scenario generator, an adaptive curriculum scheduler and a
//! from-scratch TD3 learner.
//!
//! The pipeline: episodes that end in safety violations are described
//! and batch-analyzed into [`Insights`] naming the agent's vulnerable
//! ego-relative sectors; the generator then replaces one background
//! vehicle's future with the candidate most likely to recreate exactly
//! that kind of conflict, and the scheduler mixes such scenarios into
//! training with a probability that ramps up as the agent matures.

pub mod agent;
pub mod analysis;
pub mod buffer;
pub mod eval;
pub mod generator;
pub mod geom;
pub mod prior;
pub mod scenario;
pub mod sim;
pub mod trainer;

pub use agent::{ActionSample, AgentConfig, AgentError, ReplayBuffer, Td3Agent, Transition};
pub use analysis::{
    AnalysisError, Analyzer, BackendConfig, DescribedEvent, EventDescription, EventRecord,
    GeometryLog, Insights, ViolationKind,
};
pub use buffer::{action_log_density, BehaviorBuffer, Rollout, RolloutStep};
pub use eval::{
    evaluate, masking_alignment_experiment, transfer_rates, EvalConfig, EvalError, EvalPhase,
    EvalReport, MaskingConfig, MaskingOutcome, PositionHeatmap, TransferRates,
};
pub use generator::{
    alignment_probability, score_candidate, select_optimal, GenerationError, GeneratorConfig,
    ScoredCandidate, SelectionReport,
};
pub use geom::Vec2;
pub use prior::{
    generate_candidates, rollout_maneuver, CandidateTrajectory, HistoryContext, Maneuver,
    PriorError,
};
pub use scenario::{
    load_scenario, obb_intersects, relative_position, save_scenario, CriticalArea, Lane, MapModel,
    Origin, Participant, RelativeRegion, Scenario, ScenarioError, Trajectory, VehicleState,
};
pub use sim::{
    cast_rays, compute_reward, route_progress, Action, Environment, LidarConfig, Observation,
    OutcomeFlags, RewardConfig, SensorMask, SimConfig, SimError, StepOutcome, VehicleParams,
};
pub use trainer::{
    deficiency_trend, train, trigger_probability, EpisodeRecord, SchedulerConfig, TrainError,
    TrainOutcome, TrainRunConfig, Trainer, TrendResult,
};
