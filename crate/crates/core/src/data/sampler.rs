//! Epoch-based minibatch sampling without replacement.

use log::warn;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, RngState, Stream};

/// Everything needed to resume sampling exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub pool: Vec<usize>,
    pub order: Vec<usize>,
    pub cursor: usize,
    pub epoch: u64,
    pub rng: RngState,
}

/// Draws batches from a fixed pool of clip indices. Each epoch visits a fresh
/// permutation; when fewer than a batch remain, the rest of the epoch is
/// dropped and a new permutation starts.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(pool: Vec<usize>, seed: u64) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::config("cannot sample batches from an empty split"));
        }
        let mut s = BatchSampler {
            order: Vec::new(),
            pool,
            cursor: 0,
            epoch: 0,
            seed,
            rng: stream(seed, Stream::Sampler),
        };
        s.reshuffle();
        s.epoch = 0;
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = self.pool.clone();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
        self.epoch += 1;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<usize> {
        if n > self.pool.len() {
            warn!(
                "batch size {n} exceeds the {} available clips; clips repeat within the batch",
                self.pool.len()
            );
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                if self.cursor >= self.order.len() {
                    self.reshuffle();
                }
                out.push(self.order[self.cursor]);
                self.cursor += 1;
            }
            return out;
        }
        if self.order.len() - self.cursor < n {
            self.reshuffle();
        }
        let out = self.order[self.cursor..self.cursor + n].to_vec();
        self.cursor += n;
        out
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            pool: self.pool.clone(),
            order: self.order.clone(),
            cursor: self.cursor,
            epoch: self.epoch,
            rng: RngState::capture(self.seed, &self.rng),
        }
    }

    pub fn restore(state: &SamplerState) -> Result<Self> {
        if state.pool.is_empty() || state.cursor > state.order.len() {
            return Err(Error::Integrity("inconsistent sampler state".into()));
        }
        Ok(BatchSampler {
            pool: state.pool.clone(),
            order: state.order.clone(),
            cursor: state.cursor,
            epoch: state.epoch,
            seed: state.rng.seed,
            rng: state.rng.restore(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_covers_pool_without_repeats() {
        let mut s = BatchSampler::new((0..10).collect(), 3).unwrap();
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_batch(2)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let b = s.next_batch(2);
        assert_ne!(b[0], b[1]);
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn drops_remainder() {
        let mut s = BatchSampler::new((0..5).collect(), 1).unwrap();
        s.next_batch(2);
        s.next_batch(2);
        let e = s.epoch();
        s.next_batch(2);
        assert_eq!(s.epoch(), e + 1);
    }

    #[test]
    fn oversized_batch_and_restore() {
        let mut s = BatchSampler::new(vec![4, 9], 0).unwrap();
        let b = s.next_batch(3);
        assert_eq!(b.len(), 3);
        let st = s.state();
        let mut r = BatchSampler::restore(&st).unwrap();
        for _ in 0..5 {
            assert_eq!(s.next_batch(2), r.next_batch(2));
        }
        assert!(BatchSampler::new(vec![], 0).is_err());
    }
}
