use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::Transition;

/// Fixed-capacity ring of transitions with seeded uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Insert, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` transitions drawn uniformly with replacement. Empty if the buffer
    /// is empty.
    pub fn sample(&mut self, n: usize) -> Vec<&Transition> {
        if self.storage.is_empty() {
            return Vec::new();
        }
        let len = self.storage.len();
        let idx: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..len)).collect();
        idx.into_iter().map(|i| &self.storage[i]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }
}
