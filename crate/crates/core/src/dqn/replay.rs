//! Fixed-capacity experience replay with FIFO eviction and uniform
//! without-replacement batch sampling.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Box<[f64]>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Box<[f64]>,
    pub terminal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayMemory {
    buf: Vec<Transition>,
    capacity: usize,
    /// Next slot to overwrite once full (oldest entry).
    cursor: usize,
    /// Total number of pushes ever.
    pushed: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            buf: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            cursor: 0,
            pushed: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.buf[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    /// Uniform sample of `n` distinct indices.
    pub fn sample_indices(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
        debug_assert!(n <= self.buf.len());
        rand::seq::index::sample(rng, self.buf.len(), n).into_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn t(tag: f64) -> Transition {
        Transition {
            state: vec![tag].into_boxed_slice(),
            action: 0,
            reward: tag,
            next_state: vec![tag].into_boxed_slice(),
            terminal: false,
        }
    }

    #[test]
    fn fifo_eviction_drops_oldest_first() {
        let cap = 50;
        let extra = 7;
        let mut mem = ReplayMemory::new(cap);
        for i in 0..cap + extra {
            mem.push(t(i as f64));
        }
        assert_eq!(mem.len(), cap);
        let rewards: Vec<f64> = mem.iter().map(|tr| tr.reward).collect();
        for i in 0..extra {
            assert!(!rewards.contains(&(i as f64)), "oldest {i} must be evicted");
        }
        for i in extra..cap + extra {
            assert!(rewards.contains(&(i as f64)), "{i} must be present");
        }
    }

    #[test]
    fn sampling_without_replacement() {
        let mut mem = ReplayMemory::new(100);
        for i in 0..100 {
            mem.push(t(i as f64));
        }
        let mut r = rng::stream(1, rng::streams::AGENT_REPLAY);
        for _ in 0..20 {
            let mut idx = mem.sample_indices(&mut r, 64);
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 64);
        }
    }
}
