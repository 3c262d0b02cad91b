//! Twin-delayed deterministic actor-critic for the 2D action space.
//!
//! Clipped double-Q targets, delayed actor updates and Polyak-averaged
//! target networks, on top of the hand-rolled [`Mlp`] so every gradient
//! is checkable against finite differences.

mod mlp;
mod replay;

pub use mlp::{Activation, Adam, Mlp, MlpGrads};
pub use replay::{ReplayBuffer, Transition};

use crate::buffer::action_log_density;
use crate::sim::Action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("update batch is empty")]
    EmptyBatch,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint observation dimension {found} does not match expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Discount factor, in [0, 1).
    pub gamma: f64,
    /// Target smoothing (Polyak) coefficient.
    pub tau: f64,
    /// Actor and target updates run every this many critic updates.
    pub policy_delay: usize,
    /// Exploration noise scale; also the density model's sigma.
    pub exploration_sigma: f64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment steps of uniform random actions before learning.
    pub warmup_steps: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![64, 64],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            exploration_sigma: 0.1,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            replay_capacity: 100_000,
            batch_size: 64,
            warmup_steps: 500,
        }
    }
}

/// An action with the bookkeeping the behavior buffer needs: the
/// deterministic mean, the pre-clamp sample and its log density under
/// the exploration Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub action: Action,
    pub mean: [f64; 2],
    pub pre_clamp: [f64; 2],
    pub log_density: f64,
}

/// Losses of one update call; `actor` is present only on delayed steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateLosses {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: Option<f64>,
}

#[derive(Debug)]
pub struct Td3Agent {
    pub cfg: AgentConfig,
    obs_dim: usize,
    actor: Mlp,
    critic1: Mlp,
    critic2: Mlp,
    target_actor: Mlp,
    target_critic1: Mlp,
    target_critic2: Mlp,
    adam_actor: Adam,
    adam_critic1: Adam,
    adam_critic2: Adam,
    update_count: usize,
    rng: ChaCha8Rng,
}

impl Td3Agent {
    pub fn new(obs_dim: usize, cfg: AgentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(2);
        let mut critic_sizes = vec![obs_dim + 2];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);

        let actor = Mlp::new(&actor_sizes, Activation::Tanh, &mut rng);
        let critic1 = Mlp::new(&critic_sizes, Activation::Identity, &mut rng);
        let critic2 = Mlp::new(&critic_sizes, Activation::Identity, &mut rng);
        let (target_actor, target_critic1, target_critic2) =
            (actor.clone(), critic1.clone(), critic2.clone());
        let (na, nc1, nc2) = (actor.param_count(), critic1.param_count(), critic2.param_count());
        Td3Agent {
            adam_actor: Adam::new(cfg.actor_lr, na),
            adam_critic1: Adam::new(cfg.critic_lr, nc1),
            adam_critic2: Adam::new(cfg.critic_lr, nc2),
            cfg,
            obs_dim,
            actor,
            critic1,
            critic2,
            target_actor,
            target_critic1,
            target_critic2,
            update_count: 0,
            rng,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    fn policy_mean(&self, obs: &[f64]) -> Result<[f64; 2], AgentError> {
        let out = self.actor.forward(obs);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::NonFinite("actor output".to_string()));
        }
        Ok([out[0], out[1]])
    }

    fn sample_from(&self, mean: [f64; 2], pre_clamp: [f64; 2]) -> ActionSample {
        ActionSample {
            action: Action::new(pre_clamp[0], pre_clamp[1]),
            mean,
            pre_clamp,
            log_density: action_log_density(mean, pre_clamp, self.cfg.exploration_sigma),
        }
    }

    /// Deterministic actor output, optionally with exploration noise
    /// added before clamping. The pre-clamp sample and its log density
    /// are returned for the behavior buffer.
    pub fn act(&mut self, obs: &[f64], explore: bool) -> Result<ActionSample, AgentError> {
        let mean = self.policy_mean(obs)?;
        let pre_clamp = if explore {
            let sigma = self.cfg.exploration_sigma;
            [mean[0] + sigma * gauss(&mut self.rng), mean[1] + sigma * gauss(&mut self.rng)]
        } else {
            mean
        };
        Ok(self.sample_from(mean, pre_clamp))
    }

    /// Exploration sampling from a caller-owned generator, leaving the
    /// agent untouched; used by evaluation so its draws are a pure
    /// function of the evaluation seed.
    pub fn act_with_rng(&self, obs: &[f64], rng: &mut impl Rng) -> Result<ActionSample, AgentError> {
        let mean = self.policy_mean(obs)?;
        let sigma = self.cfg.exploration_sigma;
        let pre_clamp = [mean[0] + sigma * gauss(rng), mean[1] + sigma * gauss(rng)];
        Ok(self.sample_from(mean, pre_clamp))
    }

    /// Noise-free policy output.
    pub fn act_deterministic(&self, obs: &[f64]) -> Result<ActionSample, AgentError> {
        let mean = self.policy_mean(obs)?;
        Ok(self.sample_from(mean, mean))
    }

    /// Uniform random action for warmup, with its density bookkeeping
    /// still measured against the current policy.
    pub fn act_random(&mut self, obs: &[f64]) -> Result<ActionSample, AgentError> {
        let mean = self.policy_mean(obs)?;
        let pre_clamp = [self.rng.gen_range(-1.0..=1.0), self.rng.gen_range(-1.0..=1.0)];
        Ok(self.sample_from(mean, pre_clamp))
    }

    /// One TD3 update: both critics regress to the clipped double-Q
    /// target; every `policy_delay`-th call also updates the actor by
    /// the deterministic policy gradient through critic 1 and moves the
    /// target networks.
    pub fn td3_update(&mut self, batch: &[&Transition]) -> Result<UpdateLosses, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }

        // Clipped double-Q targets.
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for t in batch {
            let next_action = {
                let mut a = self.target_actor.forward(&t.next_obs);
                let clip = self.cfg.target_noise_clip;
                for v in a.iter_mut() {
                    let noise = (self.cfg.target_noise * gauss(&mut self.rng)).clamp(-clip, clip);
                    *v = (*v + noise).clamp(-1.0, 1.0);
                }
                a
            };
            let mut next_input = t.next_obs.clone();
            next_input.extend_from_slice(&next_action);
            let q1 = self.target_critic1.forward(&next_input)[0];
            let q2 = self.target_critic2.forward(&next_input)[0];
            let min_q = q1.min(q2);
            debug_assert!(min_q <= q1 && min_q <= q2);
            let not_done = if t.done { 0.0 } else { 1.0 };
            targets.push(t.reward + self.cfg.gamma * not_done * min_q);

            let mut input = t.obs.clone();
            input.extend_from_slice(&t.action);
            inputs.push(input);
        }

        let (loss1, grads1) = critic_loss_grads(&self.critic1, &inputs, &targets);
        let (loss2, grads2) = critic_loss_grads(&self.critic2, &inputs, &targets);
        if !loss1.is_finite() || !loss2.is_finite() || !grads1.is_finite() || !grads2.is_finite() {
            return Err(AgentError::NonFinite(format!(
                "critic update (losses {loss1}, {loss2})"
            )));
        }
        self.adam_critic1.step(&mut self.critic1, &grads1);
        self.adam_critic2.step(&mut self.critic2, &grads2);

        self.update_count += 1;
        let mut actor_loss = None;
        if self.update_count % self.cfg.policy_delay == 0 {
            let observations: Vec<Vec<f64>> = batch.iter().map(|t| t.obs.clone()).collect();
            let (loss, grads) = actor_loss_grads(&self.actor, &self.critic1, &observations);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(AgentError::NonFinite(format!("actor update (loss {loss})")));
            }
            self.adam_actor.step(&mut self.actor, &grads);
            actor_loss = Some(loss);

            self.target_actor.soft_update_from(&self.actor, self.cfg.tau);
            self.target_critic1.soft_update_from(&self.critic1, self.cfg.tau);
            self.target_critic2.soft_update_from(&self.critic2, self.cfg.tau);
        }

        Ok(UpdateLosses {
            critic1: loss1,
            critic2: loss2,
            actor: actor_loss,
        })
    }

    pub fn networks(&self) -> (&Mlp, &Mlp, &Mlp) {
        (&self.actor, &self.critic1, &self.critic2)
    }

    pub fn target_networks(&self) -> (&Mlp, &Mlp, &Mlp) {
        (&self.target_actor, &self.target_critic1, &self.target_critic2)
    }

    /// Versioned JSON checkpoint with a probe hash for integrity.
    pub fn save_policy(&self, path: &Path) -> Result<(), AgentError> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            obs_dim: self.obs_dim,
            hidden: self.cfg.hidden.clone(),
            actor: self.actor.clone(),
            critic1: self.critic1.clone(),
            critic2: self.critic2.clone(),
            target_actor: self.target_actor.clone(),
            target_critic1: self.target_critic1.clone(),
            target_critic2: self.target_critic2.clone(),
            probe_hash: probe_hash(&self.actor, self.obs_dim),
        };
        let bytes = serde_json::to_vec(&ckpt).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        std::fs::write(path, bytes).map_err(|e| AgentError::Checkpoint(e.to_string()))
    }

    /// Restore from a checkpoint. Optimizer state starts fresh; the
    /// restored actor is bit-identical, as verified by the probe hash.
    pub fn load_policy(
        path: &Path,
        expected_obs_dim: usize,
        cfg: AgentConfig,
        seed: u64,
    ) -> Result<Td3Agent, AgentError> {
        let bytes = std::fs::read(path).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        let ckpt: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if ckpt.obs_dim != expected_obs_dim {
            return Err(AgentError::DimensionMismatch {
                expected: expected_obs_dim,
                found: ckpt.obs_dim,
            });
        }
        if probe_hash(&ckpt.actor, ckpt.obs_dim) != ckpt.probe_hash {
            return Err(AgentError::Checkpoint(
                "probe hash mismatch: checkpoint is corrupt".to_string(),
            ));
        }
        let mut agent = Td3Agent::new(ckpt.obs_dim, cfg, seed);
        agent.actor = ckpt.actor;
        agent.critic1 = ckpt.critic1;
        agent.critic2 = ckpt.critic2;
        agent.target_actor = ckpt.target_actor;
        agent.target_critic1 = ckpt.target_critic1;
        agent.target_critic2 = ckpt.target_critic2;
        Ok(agent)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    obs_dim: usize,
    hidden: Vec<usize>,
    actor: Mlp,
    critic1: Mlp,
    critic2: Mlp,
    target_actor: Mlp,
    target_critic1: Mlp,
    target_critic2: Mlp,
    probe_hash: String,
}

/// Hash of the actor's outputs on a fixed probe batch.
fn probe_hash(actor: &Mlp, obs_dim: usize) -> String {
    let mut hasher = Sha256::new();
    for p in 0..4 {
        let obs: Vec<f64> = (0..obs_dim)
            .map(|j| (0.37 * (p * obs_dim + j + 1) as f64).sin())
            .collect();
        for v in actor.forward(&obs) {
            hasher.update(v.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Mean-squared-error loss of a critic against fixed targets, with
/// parameter gradients.
pub fn critic_loss_grads(critic: &Mlp, inputs: &[Vec<f64>], targets: &[f64]) -> (f64, MlpGrads) {
    let n = inputs.len() as f64;
    let mut grads = critic.zero_grads();
    let mut loss = 0.0;
    for (input, &y) in inputs.iter().zip(targets) {
        let cache = critic.forward_cached(input);
        let q = cache.output()[0];
        loss += (q - y) * (q - y) / n;
        critic.backward(&cache, &[2.0 * (q - y) / n], &mut grads);
    }
    (loss, grads)
}

/// Deterministic policy-gradient loss `-mean Q(s, pi(s))` with actor
/// parameter gradients, differentiating through the critic's action
/// input.
pub fn actor_loss_grads(actor: &Mlp, critic: &Mlp, observations: &[Vec<f64>]) -> (f64, MlpGrads) {
    let n = observations.len() as f64;
    let obs_dim = actor.in_dim();
    let mut grads = actor.zero_grads();
    let mut scratch = critic.zero_grads();
    let mut loss = 0.0;
    for obs in observations {
        let actor_cache = actor.forward_cached(obs);
        let mut input = obs.clone();
        input.extend_from_slice(actor_cache.output());
        let critic_cache = critic.forward_cached(&input);
        loss -= critic_cache.output()[0] / n;
        let dinput = critic.backward(&critic_cache, &[-1.0 / n], &mut scratch);
        actor.backward(&actor_cache, &dinput[obs_dim..], &mut grads);
    }
    (loss, grads)
}

/// Standard normal draw via Box-Muller.
fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_agent(seed: u64) -> Td3Agent {
        Td3Agent::new(
            3,
            AgentConfig {
                hidden: vec![8],
                batch_size: 4,
                ..AgentConfig::default()
            },
            seed,
        )
    }

    fn batch_of(n: usize, done: bool, reward: f64) -> Vec<Transition> {
        (0..n)
            .map(|i| Transition {
                obs: vec![0.1 * i as f64, -0.2, 0.5],
                action: [0.3, -0.4],
                reward,
                next_obs: vec![0.2, 0.1 * i as f64, -0.5],
                done,
            })
            .collect()
    }

    #[test]
    fn deterministic_act_repeats_and_noise_respects_sigma_zero() {
        let mut agent = tiny_agent(1);
        let obs = vec![0.2, -0.3, 0.7];
        let a = agent.act(&obs, false).unwrap();
        let b = agent.act(&obs, false).unwrap();
        assert_eq!(a, b);
        assert!(a.action.steer.abs() <= 1.0 && a.action.acc.abs() <= 1.0);

        let mut agent = tiny_agent(1);
        agent.cfg.exploration_sigma = 1e-300;
        let c = agent.act(&obs, true).unwrap();
        assert!((c.action.steer - a.action.steer).abs() < 1e-12);
        assert!((c.action.acc - a.action.acc).abs() < 1e-12);
    }

    #[test]
    fn terminal_and_discountless_targets_reduce_to_reward() {
        // done = 1: y = r exactly, so the critic regresses toward r and
        // the first update's loss equals mean (q - r)^2 for both.
        let mut agent = tiny_agent(2);
        let transitions = batch_of(4, true, 1.5);
        let batch: Vec<&Transition> = transitions.iter().collect();
        let mut expected1 = 0.0;
        let mut expected2 = 0.0;
        for t in &transitions {
            let mut input = t.obs.clone();
            input.extend_from_slice(&t.action);
            expected1 += (agent.critic1.forward(&input)[0] - 1.5).powi(2) / 4.0;
            expected2 += (agent.critic2.forward(&input)[0] - 1.5).powi(2) / 4.0;
        }
        let losses = agent.td3_update(&batch).unwrap();
        assert!((losses.critic1 - expected1).abs() < 1e-12);
        assert!((losses.critic2 - expected2).abs() < 1e-12);

        // gamma = 0 gives the same reduction on non-terminal data.
        let mut agent = tiny_agent(3);
        agent.cfg.gamma = 0.0;
        let transitions = batch_of(4, false, -0.7);
        let batch: Vec<&Transition> = transitions.iter().collect();
        let mut expected = 0.0;
        for t in &transitions {
            let mut input = t.obs.clone();
            input.extend_from_slice(&t.action);
            expected += (agent.critic1.forward(&input)[0] + 0.7).powi(2) / 4.0;
        }
        let losses = agent.td3_update(&batch).unwrap();
        assert!((losses.critic1 - expected).abs() < 1e-12);
    }

    #[test]
    fn targets_move_only_on_delayed_steps_by_tau_exactly() {
        let mut agent = tiny_agent(4);
        assert_eq!(agent.cfg.policy_delay, 2);
        let transitions = batch_of(4, false, 0.3);
        let batch: Vec<&Transition> = transitions.iter().collect();

        let frozen = agent.target_actor.params_flat();
        let losses = agent.td3_update(&batch).unwrap();
        assert!(losses.actor.is_none());
        assert_eq!(agent.target_actor.params_flat(), frozen);

        let before_target = agent.target_actor.params_flat();
        let losses = agent.td3_update(&batch).unwrap();
        assert!(losses.actor.is_some());
        let after_actor = agent.actor.params_flat();
        for ((t_new, t_old), a) in agent
            .target_actor
            .params_flat()
            .iter()
            .zip(&before_target)
            .zip(&after_actor)
        {
            let expected = agent.cfg.tau * a + (1.0 - agent.cfg.tau) * t_old;
            assert!((t_new - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut critic = Mlp::new(&[4, 6, 1], Activation::Identity, &mut rng);
        let inputs: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.7).sin()).collect())
            .collect();
        let targets: Vec<f64> = (0..5).map(|i| (i as f64 * 0.3).cos()).collect();
        let (_, grads) = critic_loss_grads(&critic, &inputs, &targets);
        let flat = grads.flat();
        let eps = 1e-5;
        for i in 0..critic.param_count() {
            let orig = critic.get_param(i);
            critic.set_param(i, orig + eps);
            let (up, _) = critic_loss_grads(&critic, &inputs, &targets);
            critic.set_param(i, orig - eps);
            let (down, _) = critic_loss_grads(&critic, &inputs, &targets);
            critic.set_param(i, orig);
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(flat[i].abs()).max(1e-6);
            assert!(
                (fd - flat[i]).abs() / denom <= 1e-4,
                "critic param {i}: fd {fd} vs {}",
                flat[i]
            );
        }
    }

    #[test]
    fn actor_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut actor = Mlp::new(&[3, 5, 2], Activation::Tanh, &mut rng);
        let critic = Mlp::new(&[5, 6, 1], Activation::Identity, &mut rng);
        let observations: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..3).map(|j| ((i * 3 + j) as f64 * 0.9).sin()).collect())
            .collect();
        let (_, grads) = actor_loss_grads(&actor, &critic, &observations);
        let flat = grads.flat();
        let eps = 1e-5;
        for i in 0..actor.param_count() {
            let orig = actor.get_param(i);
            actor.set_param(i, orig + eps);
            let (up, _) = actor_loss_grads(&actor, &critic, &observations);
            actor.set_param(i, orig - eps);
            let (down, _) = actor_loss_grads(&actor, &critic, &observations);
            actor.set_param(i, orig);
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(flat[i].abs()).max(1e-6);
            assert!(
                (fd - flat[i]).abs() / denom <= 1e-4,
                "actor param {i}: fd {fd} vs {}",
                flat[i]
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_restores_bitwise_actor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let mut agent = tiny_agent(7);
        let transitions = batch_of(4, false, 0.2);
        let batch: Vec<&Transition> = transitions.iter().collect();
        for _ in 0..6 {
            agent.td3_update(&batch).unwrap();
        }
        agent.save_policy(&path).unwrap();
        let mut restored =
            Td3Agent::load_policy(&path, 3, agent.cfg.clone(), 99).unwrap();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = agent.act(&obs, false).unwrap();
            let b = restored.act(&obs, false).unwrap();
            assert_eq!(a.action, b.action);
        }
    }

    #[test]
    fn corrupt_and_mismatched_checkpoints_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let agent = tiny_agent(8);
        agent.save_policy(&path).unwrap();

        // Different observation dimensionality.
        let err = Td3Agent::load_policy(&path, 9, agent.cfg.clone(), 0).unwrap_err();
        match err {
            AgentError::DimensionMismatch { expected, found } => {
                assert_eq!((expected, found), (9, 3));
            }
            other => panic!("unexpected {other}"),
        }

        // Truncated file: parse error, nothing constructed.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            Td3Agent::load_policy(&path, 3, agent.cfg.clone(), 0),
            Err(AgentError::Checkpoint(_))
        ));
    }
}
