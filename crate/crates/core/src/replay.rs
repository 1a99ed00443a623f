//! FIFO transition buffers: the real replay buffer, the fictional buffer for
//! imagination rollouts, and the fixed-size episode batch used for model fitting.

use crate::numerics::Vector;
use rand::Rng;
use std::collections::VecDeque;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("buffer holds {have} transitions, {need} required")]
    InsufficientData { have: usize, need: usize },
    #[error("episode batch holds {have} of {capacity} transitions")]
    NotFull { have: usize, capacity: usize },
}

/// One environment step. `t` is the 1-based timestep within its episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: Vector,
    pub u: Vector,
    pub r: f64,
    pub next_x: Vector,
    pub t: usize,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        }
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

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    /// Total pushes over the buffer's lifetime, evicted ones included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, tr: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(tr);
        self.inserted += 1;
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        if self.items.is_empty() {
            return Err(ReplayError::InsufficientData { have: 0, need: 1 });
        }
        let n = self.items.len();
        Ok((0..m).map(|_| rng.random_range(0..n)).collect())
    }

    /// `m` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>, ReplayError> {
        Ok(self
            .sample_indices(m, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    /// Splits the contents into consecutive episodes of `horizon` steps.
    pub fn episodes(&self, horizon: usize) -> Vec<Vec<Transition>> {
        let all: Vec<Transition> = self.items.iter().cloned().collect();
        all.chunks(horizon).map(<[Transition]>::to_vec).collect()
    }

    /// One CSV row per transition: `t, x…, u…, r, x′…`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        if let Some(first) = self.items.front() {
            let mut header = vec!["t".to_string()];
            header.extend((0..first.x.len()).map(|i| format!("x{i}")));
            header.extend((0..first.u.len()).map(|i| format!("u{i}")));
            header.push("r".into());
            header.extend((0..first.next_x.len()).map(|i| format!("next_x{i}")));
            w.write_record(&header)?;
        }
        for tr in &self.items {
            let mut row = vec![tr.t.to_string()];
            row.extend(tr.x.iter().map(|v| format!("{v:e}")));
            row.extend(tr.u.iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", tr.r));
            row.extend(tr.next_x.iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Moves a full episode batch into `old`, leaving `batch` empty.
pub fn swap_batch(batch: &mut ReplayBuffer, old: &mut ReplayBuffer) -> Result<(), ReplayError> {
    if !batch.is_full() {
        return Err(ReplayError::NotFull {
            have: batch.len(),
            capacity: batch.capacity(),
        });
    }
    old.clear();
    for tr in batch.items.drain(..) {
        old.push(tr);
    }
    Ok(())
}
