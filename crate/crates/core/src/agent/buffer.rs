use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::env::EnvState;
use crate::error::{Error, Result};

/// Bounded FIFO of single-item, detached environment states.
pub struct StateBuffer {
    capacity: usize,
    items: VecDeque<EnvState>,
}

impl StateBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Adds every item of a batched state, evicting the oldest beyond capacity.
    pub fn push(&mut self, states: &EnvState) -> Result<()> {
        for s in states.detach().split()? {
            if self.items.len() == self.capacity {
                self.items.pop_front();
            }
            self.items.push_back(s);
        }
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&EnvState> {
        self.items.get(i)
    }

    /// Samples `n` stored states as one batch, without replacement when the
    /// buffer is large enough.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<EnvState> {
        if self.items.is_empty() {
            return Err(Error::Empty("state buffer"));
        }
        let picks: Vec<usize> = if n <= self.items.len() {
            index::sample(rng, self.items.len(), n).into_vec()
        } else {
            (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
        };
        let chosen: Vec<&EnvState> = picks.iter().map(|&i| &self.items[i]).collect();
        EnvState::stack(&chosen)
    }
}
