//! Command-line front end: corpus generation, training, event analysis,
//! adversarial scenario generation, evaluation, the perception-masking
//! heatmap experiment, and frame-dumping replay.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use curricar::analysis::{Analyzer, DescribedEvent, EventRecord};
use curricar::eval::{
    evaluate, masking_alignment_experiment, EvalConfig, EvalPhase, MaskingConfig,
};
use curricar::trainer::corpus::{generate_corpus, write_corpus};
use curricar::trainer::{load_corpus, train, AnalyzerChoice, TrainRunConfig};
use curricar::{
    load_scenario, select_optimal, BehaviorBuffer, GeneratorConfig, Insights, RelativeRegion,
    Rollout, Scenario, SensorMask, Td3Agent,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "curricar", version, about = "Closed-loop curriculum training for a 2D driving agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Stub,
    Http,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PhaseArg {
    Regular,
    Safety,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MaskArg {
    Front,
    Behind,
    Left,
    Right,
}

impl From<MaskArg> for RelativeRegion {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Front => RelativeRegion::Front,
            MaskArg::Behind => RelativeRegion::Behind,
            MaskArg::Left => RelativeRegion::Left,
            MaskArg::Right => RelativeRegion::Right,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural corpus of regular scenarios.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the closed training loop from a JSON config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Describe and batch-analyze recorded events into insights.
    Analyze {
        /// Newline-delimited JSON event records.
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_enum, default_value = "stub")]
        backend: BackendArg,
        /// Write the insights JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transform one scenario into its safety-critical variant.
    Generate {
        #[arg(long)]
        scenario: PathBuf,
        /// Insights JSON steering the alignment scoring.
        #[arg(long)]
        insights: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON report of every candidate score.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Behavior rollouts as newline-delimited JSON; without
        /// rollouts (or a policy to produce them) generation degrades
        /// to the documented fallback path.
        #[arg(long)]
        rollouts: Option<PathBuf>,
        /// Policy checkpoint used to bootstrap response rollouts.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Evaluate a policy checkpoint over a corpus.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "regular")]
        phase: PhaseArg,
        #[arg(long)]
        insights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Perception-masking alignment experiment; writes the heatmap CSV.
    Heatmap {
        #[arg(long, value_enum)]
        mask: MaskArg,
        #[arg(long)]
        out: PathBuf,
        /// Corpus directory; procedural scenarios are used when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        min_generated: usize,
        #[arg(long, default_value_t = 60000)]
        max_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay a scenario under a policy, dumping one frame per step.
    Replay {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        frames: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Corpus { out, count, seed } => {
            let scenarios = generate_corpus(count, seed);
            write_corpus(&out, &scenarios)?;
            println!("wrote {count} scenarios to {}", out.display());
        }
        Command::Train { config } => {
            let bytes = std::fs::read(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg: TrainRunConfig = serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing {}", config.display()))?;
            let out_dir = cfg.out_dir.clone();
            let outcome = train(cfg)?;
            println!(
                "trained for {} steps over {} episodes; artifacts in {}",
                outcome.steps,
                outcome.log.len(),
                out_dir.display()
            );
        }
        Command::Analyze { events, backend, out } => {
            let cfg = curricar::BackendConfig::default();
            let analyzer = match backend {
                BackendArg::Stub => Analyzer::stub(cfg),
                BackendArg::Http => Analyzer::with_backend(
                    cfg.clone(),
                    Box::new(curricar::analysis::HttpChatBackend::new(cfg)?),
                ),
            };
            let text = std::fs::read_to_string(&events)
                .with_context(|| format!("reading {}", events.display()))?;
            let mut batch = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let event: EventRecord = serde_json::from_str(line).context("parsing event")?;
                let description = analyzer.describe_event(&event)?;
                batch.push(DescribedEvent {
                    scenario_id: event.scenario_id,
                    step: event.step,
                    description,
                    geometry: event.geometry,
                });
            }
            if batch.is_empty() {
                bail!("no events in {}", events.display());
            }
            let insights = analyzer.analyze_batch(&batch, 0)?;
            let json = serde_json::to_string_pretty(&insights)?;
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
        }
        Command::Generate {
            scenario,
            insights,
            out,
            report,
            rollouts,
            policy,
        } => {
            let scenario = read_scenario(&scenario)?;
            let insights: Insights = read_json(&insights)?;
            let generator_cfg = GeneratorConfig::default();
            let eval_cfg = EvalConfig::default();

            let mut buffer = BehaviorBuffer::new(5);
            if let Some(path) = rollouts {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let mut rollout: Rollout = serde_json::from_str(line).context("parsing rollout")?;
                    // Rollouts are keyed by scenario; retarget stray ids.
                    rollout.scenario_id = scenario.id.clone();
                    buffer.record_rollout(rollout);
                }
            } else if let Some(path) = policy {
                let agent = load_policy_auto(&path)?;
                let mut rng = rand_seeded(7);
                let mut env = curricar::Environment::new(eval_cfg.sim.clone());
                for _ in 0..2 {
                    buffer.record_rollout(bootstrap_rollout(
                        &agent,
                        &mut env,
                        &scenario,
                        &mut rng,
                    )?);
                }
            }

            let prior = curricar::generator::ManeuverPrior {
                params: eval_cfg.sim.vehicle,
            };
            let (generated, selection) =
                select_optimal(&scenario, &buffer, &insights, &prior, &generator_cfg)?;
            std::fs::write(&out, curricar::scenario::save_scenario_pretty(&generated))?;
            println!(
                "generated scenario written to {} (fallback: {}, failed: {})",
                out.display(),
                selection.fallback,
                selection.generation_failed
            );
            if let Some(path) = report {
                std::fs::write(path, serde_json::to_string_pretty(&selection)?)?;
            }
        }
        Command::Evaluate {
            policy,
            corpus,
            phase,
            insights,
            out,
            seed,
        } => {
            let agent = load_policy_auto(&policy)?;
            let pool = load_corpus(&corpus)?;
            let insights: Option<Insights> = match insights {
                Some(path) => Some(read_json(&path)?),
                None => None,
            };
            let rays = agent.obs_dim() - 8;
            let mut cfg = EvalConfig::default();
            cfg.sim.lidar.rays = rays;
            let phase = match phase {
                PhaseArg::Regular => EvalPhase::Regular,
                PhaseArg::Safety => EvalPhase::SafetyCritical,
            };
            let report = evaluate(&agent, &pool, phase, insights.as_ref(), &cfg, seed)?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            println!(
                "evaluated {} scenarios: crash rate {:.1}%, completion {:.1}%, reward {:.2}",
                report.records.len(),
                report.aggregates.crash_rate_pct,
                report.aggregates.road_completion_pct,
                report.aggregates.mean_episode_reward
            );
        }
        Command::Heatmap {
            mask,
            out,
            corpus,
            min_generated,
            max_steps,
            seed,
        } => {
            let pool = match corpus {
                Some(dir) => load_corpus(&dir)?,
                None => generate_corpus(5, seed),
            };
            let mut train = TrainRunConfig {
                seed,
                batch_size: 4,
                analyzer: AnalyzerChoice::Stub,
                ..TrainRunConfig::default()
            };
            train.generator.candidates_per_bv = 16;
            let outcome = masking_alignment_experiment(
                pool,
                MaskingConfig {
                    regions: vec![mask.into()],
                    min_generated,
                    max_steps,
                    train,
                },
            )?;
            std::fs::write(&out, outcome.heatmap.to_csv())?;
            println!(
                "alignment fraction {:.3} over {} non-fallback overlaps ({} generated episodes); heatmap in {}",
                outcome.alignment_fraction,
                outcome.non_fallback_overlaps,
                outcome.generated_episodes,
                out.display()
            );
        }
        Command::Replay {
            scenario,
            policy,
            frames,
        } => {
            let scenario = read_scenario(&scenario)?;
            let agent = load_policy_auto(&policy)?;
            let rays = agent.obs_dim() - 8;
            let mut cfg = EvalConfig::default();
            cfg.sim.lidar.rays = rays;
            let records = curricar::eval::replay_frames(&agent, &scenario, &cfg, &frames)?;
            let mut log = String::new();
            for r in &records {
                log.push_str(&serde_json::to_string(r)?);
                log.push('\n');
            }
            std::fs::write(frames.join("episode.ndjson"), log)?;
            println!("replayed {} steps; frames in {}", records.len(), frames.display());
        }
    }
    Ok(())
}

fn read_scenario(path: &Path) -> Result<Scenario> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(load_scenario(&bytes)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Load a checkpoint, inferring the observation dimensionality from the
/// file itself.
fn load_policy_auto(path: &Path) -> Result<Td3Agent> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let obs_dim = value
        .get("obs_dim")
        .and_then(|v| v.as_u64())
        .context("checkpoint missing obs_dim")? as usize;
    Ok(Td3Agent::load_policy(
        path,
        obs_dim,
        curricar::AgentConfig::default(),
        0,
    )?)
}

fn rand_seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn bootstrap_rollout(
    agent: &Td3Agent,
    env: &mut curricar::Environment,
    scenario: &Scenario,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Rollout> {
    let mut obs = env.reset(scenario, &SensorMask::none(), 0)?.to_vec();
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
