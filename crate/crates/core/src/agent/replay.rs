//! Uniform-sampling transition store with FIFO eviction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: [f64; 2],
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    write: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            data: Vec::with_capacity(capacity.min(4096)),
            capacity,
            write: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&mut self, batch: usize) -> Vec<&Transition> {
        let n = self.data.len();
        (0..batch).map(|_| &self.data[self.rng.gen_range(0..n)]).collect()
    }
}
