//! Rolling per-scenario store of recent agent rollouts.
//!
//! Each rollout keeps, per step, the state, the executed action, the
//! per-step log density of the action under the exploration policy, and
//! the running sum of those log densities. Log space avoids the
//! underflow of multiplying raw densities over long horizons; scoring
//! consumes shift-normalized `exp(cum - max)` values, which leaves the
//! generator's argmax unchanged.

use crate::scenario::VehicleState;
use crate::sim::Action;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::VecDeque;

/// One recorded step: the state the action was taken in, the action, and
/// its (cumulative) log density under the exploration policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub state: VehicleState,
    pub action: Action,
    pub log_prob: f64,
    pub cum_log_prob: f64,
}

/// A recorded episode for one scenario. Step `k` holds the state at time
/// `k * dt`, so absolute step indices line up with replayed trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub scenario_id: String,
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    /// Build a rollout, accumulating the running log-density sums.
    pub fn from_steps(
        scenario_id: impl Into<String>,
        steps: impl IntoIterator<Item = (VehicleState, Action, f64)>,
    ) -> Self {
        let mut cum = 0.0;
        let steps = steps
            .into_iter()
            .map(|(state, action, log_prob)| {
                cum += log_prob;
                RolloutStep {
                    state,
                    action,
                    log_prob,
                    cum_log_prob: cum,
                }
            })
            .collect();
        Rollout {
            scenario_id: scenario_id.into(),
            steps,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Log density of a 2D isotropic Gaussian with standard deviation
/// `sigma` per dimension, evaluated at the pre-clamp action sample.
pub fn action_log_density(mean: [f64; 2], taken: [f64; 2], sigma: f64) -> f64 {
    assert!(sigma > 0.0, "sigma must be positive");
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln();
    let mut total = 0.0;
    for i in 0..2 {
        let z = (taken[i] - mean[i]) / sigma;
        total += log_norm - 0.5 * z * z;
    }
    total
}

/// Per-scenario ring buffers of the `capacity` most recent rollouts,
/// evicted strictly oldest-first.
#[derive(Debug, Clone, Default)]
pub struct BehaviorBuffer {
    capacity: usize,
    buffers: BTreeMap<String, VecDeque<Rollout>>,
}

impl BehaviorBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "capacity must be at least 1");
        BehaviorBuffer {
            capacity,
            buffers: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn record_rollout(&mut self, rollout: Rollout) {
        let ring = self.buffers.entry(rollout.scenario_id.clone()).or_default();
        ring.push_back(rollout);
        while ring.len() > self.capacity {
            ring.pop_front();
        }
    }

    /// All stored rollouts for the scenario in insertion order (the
    /// empirical response distribution); empty when none are stored.
    pub fn sample_responses(&self, scenario_id: &str) -> Vec<&Rollout> {
        self.buffers
            .get(scenario_id)
            .map(|ring| ring.iter().collect())
            .unwrap_or_default()
    }

    pub fn scenario_ids(&self) -> impl Iterator<Item = &str> {
        self.buffers.keys().map(String::as_str)
    }

    /// Dump every stored rollout as newline-delimited JSON.
    pub fn dump_ndjson(&self) -> String {
        let mut out = String::new();
        for ring in self.buffers.values() {
            for rollout in ring {
                out.push_str(&serde_json::to_string(rollout).expect("rollout serializes"));
                out.push('\n');
            }
        }
        out
    }
}

/// Shift-normalized cumulative action probabilities for a set of
/// rollouts: `exp(cum_log_prob - max over the whole set)`. The common
/// shift cancels in the generator's argmax but keeps the exponentials
/// finite over long horizons.
pub fn normalized_step_probs(rollouts: &[&Rollout]) -> Vec<Vec<f64>> {
    let max = rollouts
        .iter()
        .flat_map(|r| r.steps.iter().map(|s| s.cum_log_prob))
        .fold(f64::NEG_INFINITY, f64::max);
    rollouts
        .iter()
        .map(|r| {
            r.steps
                .iter()
                .map(|s| (s.cum_log_prob - max).exp())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;

    fn dummy_state() -> VehicleState {
        VehicleState {
            position: Vec2::ZERO,
            heading: 0.0,
            speed: 0.0,
            length: 4.0,
            width: 2.0,
        }
    }

    fn rollout(id: &str, tag: f64, n: usize) -> Rollout {
        Rollout::from_steps(
            id,
            (0..n).map(|k| (dummy_state(), Action::new(0.0, 0.0), -0.1 * (k as f64 + 1.0) - tag)),
        )
    }

    #[test]
    fn density_peak_is_zero_at_the_normalizing_sigma() {
        let sigma = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let d = action_log_density([0.3, -0.2], [0.3, -0.2], sigma);
        assert!(d.abs() < 1e-12, "{d}");
    }

    #[test]
    fn one_sigma_offset_costs_exactly_half() {
        let sigma = 0.1;
        let peak = action_log_density([0.0, 0.0], [0.0, 0.0], sigma);
        let off = action_log_density([0.0, 0.0], [sigma, 0.0], sigma);
        assert!((peak - off - 0.5).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        // Midpoint quadrature over +-6 sigma.
        let sigma = 0.37;
        let n = 400;
        let span = 12.0 * sigma;
        let h = span / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -6.0 * sigma + (i as f64 + 0.5) * h;
                let y = -6.0 * sigma + (j as f64 + 0.5) * h;
                total += action_log_density([0.0, 0.0], [x, y], sigma).exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn fifo_eviction_keeps_the_latest() {
        let mut buf = BehaviorBuffer::new(2);
        for tag in [1.0, 2.0, 3.0] {
            buf.record_rollout(rollout("s", tag, 3));
        }
        let got = buf.sample_responses("s");
        assert_eq!(got.len(), 2);
        assert_eq!(got[0], &rollout("s", 2.0, 3));
        assert_eq!(got[1], &rollout("s", 3.0, 3));
    }

    #[test]
    fn scenarios_do_not_alias() {
        let mut buf = BehaviorBuffer::new(1);
        buf.record_rollout(rollout("a", 1.0, 2));
        buf.record_rollout(rollout("b", 2.0, 2));
        assert_eq!(buf.sample_responses("a").len(), 1);
        assert_eq!(buf.sample_responses("b").len(), 1);
        assert_eq!(buf.sample_responses("a")[0].scenario_id, "a");
        assert!(buf.sample_responses("missing").is_empty());
    }

    #[test]
    fn cumulative_log_probs_recompute_from_per_step_values() {
        let r = rollout("s", 0.0, 40);
        let mut cum = 0.0;
        for step in &r.steps {
            cum += step.log_prob;
            assert!((step.cum_log_prob - cum).abs() <= 1e-12);
        }
    }

    #[test]
    fn eviction_after_many_records_keeps_insertion_order() {
        let capacity = 3;
        let mut buf = BehaviorBuffer::new(capacity);
        for tag in 0..(capacity + 2) {
            buf.record_rollout(rollout("s", tag as f64, 2));
        }
        let got = buf.sample_responses("s");
        assert_eq!(got.len(), capacity);
        for (i, r) in got.iter().enumerate() {
            assert_eq!(*r, &rollout("s", (i + 2) as f64, 2));
        }
    }

    #[test]
    fn normalized_probs_peak_at_one() {
        let r1 = rollout("s", 0.0, 5);
        let r2 = rollout("s", 1.0, 5);
        let probs = normalized_step_probs(&[&r1, &r2]);
        let max = probs.iter().flatten().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        assert!((max - 1.0).abs() < 1e-12);
        assert!(probs.iter().flatten().all(|&p| p > 0.0 && p <= 1.0));
    }
}
