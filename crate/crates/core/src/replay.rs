//! Experience replay over fixed-length transition series.
//!
//! An episode is cut into consecutive, non-overlapping windows of `T`
//! transitions. A short final window is padded by repeating the episode's
//! last transition. The buffer stores whole series and evicts oldest-first.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub s_next: Vec<f64>,
    /// Action taken at `s_next`; equals `a` when none exists.
    pub a_next: usize,
    pub r: f64,
    /// `s_next` is absorbing.
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSeries {
    pub steps: Vec<Transition>,
    /// Padded copies at the tail of `steps`.
    pub fill_count: usize,
}

impl TransitionSeries {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The transitions that were actually observed.
    pub fn real_steps(&self) -> &[Transition] {
        &self.steps[..self.steps.len() - self.fill_count]
    }

    /// Checks chain consistency and fill semantics.
    pub fn validate(&self) -> Result<()> {
        if self.fill_count >= self.steps.len() {
            return Err(Error::InvalidConfig(format!(
                "fill count {} must be below series length {}",
                self.fill_count,
                self.steps.len()
            )));
        }
        let real = self.real_steps();
        if real.windows(2).any(|w| w[0].s_next != w[1].s) {
            return Err(Error::InvalidConfig("series transitions are not consecutive".into()));
        }
        let last = real.last().expect("at least one real step");
        if self.steps[real.len()..].iter().any(|t| t != last) {
            return Err(Error::InvalidConfig("fill entries must copy the last real transition".into()));
        }
        Ok(())
    }
}

/// Splits an episode into series of exactly `t_len` transitions.
pub fn segment_episode(episode: &[Transition], t_len: usize) -> Result<Vec<TransitionSeries>> {
    if episode.is_empty() {
        return Err(Error::Empty("segment_episode: episode"));
    }
    if t_len == 0 {
        return Err(Error::InvalidConfig("series length must be at least 1".into()));
    }
    let last = episode.last().expect("non-empty");
    Ok(episode
        .chunks(t_len)
        .map(|chunk| {
            let fill_count = t_len - chunk.len();
            let mut steps = Vec::with_capacity(t_len);
            steps.extend_from_slice(chunk);
            steps.extend(std::iter::repeat_n(last, fill_count).cloned());
            TransitionSeries { steps, fill_count }
        })
        .collect())
}

/// Ring buffer of series, capacity counted in series.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<TransitionSeries>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be at least 1".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            storage: VecDeque::new(),
        })
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

    pub fn push(&mut self, series: TransitionSeries) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(series);
    }

    pub fn extend(&mut self, series: impl IntoIterator<Item = TransitionSeries>) {
        for s in series {
            self.push(s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionSeries> {
        self.storage.iter()
    }

    /// `m` series drawn uniformly with replacement. Only an empty buffer is
    /// insufficient; the training loop enforces its own warm-up minimum.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<&TransitionSeries>> {
        if self.storage.is_empty() {
            return Err(Error::InsufficientSamples {
                available: self.storage.len(),
                requested: m,
            });
        }
        let n = self.storage.len();
        Ok((0..m).map(|_| &self.storage[rng.random_range(0..n)]).collect())
    }
}
