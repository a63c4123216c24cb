//! Proportional prioritized replay memory.
//!
//! Entries are addressed by their insertion index (a monotonically growing
//! counter). The ring slot is `index % capacity`; an index is live while it is
//! among the `len()` most recent insertions.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("requested {requested} samples but memory holds {available}")]
    Insufficient { requested: usize, available: usize },
    #[error("beta {0} outside [0, 1]")]
    BadBeta(f64),
    #[error("memory capacity must be positive")]
    ZeroCapacity,
    #[error("priority {0} below the floor")]
    PriorityBelowFloor(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Live action count in `next_state`; the bootstrap max ignores the rest.
    pub next_live: usize,
    pub terminal: bool,
}

/// Binary sum tree over a power-of-two number of leaves. Node 1 is the root,
/// the leaves occupy `leaves..2 * leaves`.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        SumTree { leaves, nodes: vec![0.0; 2 * leaves] }
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    /// Sets leaf `i` and recomputes every ancestor from its children, so the
    /// internal sums never accumulate update drift.
    pub fn set(&mut self, i: usize, value: f64) {
        let mut node = self.leaves + i;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Leaf whose cumulative interval contains `target`, for `target` in
    /// `[0, total)`.
    pub fn find(&self, mut target: f64) -> usize {
        let mut node = 1;
        while node < self.leaves {
            let left = 2 * node;
            if target < self.nodes[left] {
                node = left;
            } else {
                target -= self.nodes[left];
                node = left + 1;
            }
        }
        node - self.leaves
    }
}

/// Reference sampler: cumulative scan from the left.
pub fn linear_scan_find(values: &[f64], target: f64) -> usize {
    let mut cum = 0.0;
    for (i, v) in values.iter().enumerate() {
        cum += v;
        if target < cum {
            return i;
        }
    }
    values.len().saturating_sub(1)
}

/// Which maximum the importance-sampling weights are divided by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsNormalization {
    #[default]
    Batch,
    Memory,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    /// Added to |TD error| and used as the priority of the very first entry.
    pub priority_epsilon: f64,
    #[serde(default)]
    pub normalization: IsNormalization,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig { capacity: 1000, alpha: 0.5, priority_epsilon: 0.01, normalization: IsNormalization::Batch }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub index: u64,
    pub transition: Transition,
    pub probability: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SampledBatch {
    pub samples: Vec<Sample>,
}

#[derive(Clone, Debug)]
pub struct ReplayMemory {
    config: ReplayConfig,
    slots: Vec<Transition>,
    priorities: Vec<f64>,
    tree: SumTree,
    inserted: u64,
    max_priority: f64,
    stale_updates: u64,
}

impl ReplayMemory {
    pub fn new(config: ReplayConfig) -> Result<Self, ReplayError> {
        if config.capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(ReplayMemory {
            config,
            slots: Vec::with_capacity(config.capacity),
            priorities: Vec::with_capacity(config.capacity),
            tree: SumTree::new(config.capacity),
            inserted: 0,
            max_priority: config.priority_epsilon,
            stale_updates: 0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.config.capacity
    }

    /// Lifetime maximum priority; new entries start with it.
    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    /// Priority updates that arrived for already evicted entries.
    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    pub fn total(&self) -> f64 {
        self.tree.total()
    }

    fn slot(&self, index: u64) -> Option<usize> {
        let oldest = self.inserted - self.slots.len() as u64;
        (index >= oldest && index < self.inserted).then(|| (index % self.config.capacity as u64) as usize)
    }

    pub fn is_live(&self, index: u64) -> bool {
        self.slot(index).is_some()
    }

    pub fn get(&self, index: u64) -> Option<&Transition> {
        self.slot(index).map(|s| &self.slots[s])
    }

    pub fn priority(&self, index: u64) -> Option<f64> {
        self.slot(index).map(|s| self.priorities[s])
    }

    /// Live insertion indices, oldest first.
    pub fn live_indices(&self) -> std::ops::Range<u64> {
        self.inserted - self.slots.len() as u64..self.inserted
    }

    /// Stores `tr` with the current maximum priority, evicting the oldest
    /// entry when full. Returns the insertion index.
    pub fn store(&mut self, tr: Transition) -> u64 {
        let index = self.inserted;
        let slot = (index % self.config.capacity as u64) as usize;
        if slot == self.slots.len() {
            self.slots.push(tr);
            self.priorities.push(0.0);
        } else {
            self.slots[slot] = tr;
        }
        self.inserted += 1;
        self.write_priority(slot, self.max_priority);
        index
    }

    fn write_priority(&mut self, slot: usize, p: f64) {
        self.priorities[slot] = p;
        self.tree.set(slot, p.powf(self.config.alpha));
        if p > self.max_priority {
            self.max_priority = p;
        }
    }

    /// Sets priority `|td_error| + epsilon`. Stale indices are counted and
    /// ignored; returns whether the entry was live.
    pub fn update_priority(&mut self, index: u64, td_error: f64) -> bool {
        match self.slot(index) {
            Some(slot) => {
                self.write_priority(slot, td_error.abs() + self.config.priority_epsilon);
                true
            }
            None => {
                self.stale_updates += 1;
                false
            }
        }
    }

    /// Sets a raw priority. It must not be below the floor.
    pub fn set_priority(&mut self, index: u64, priority: f64) -> Result<bool, ReplayError> {
        if priority.is_nan() || priority < self.config.priority_epsilon {
            return Err(ReplayError::PriorityBelowFloor(priority));
        }
        Ok(match self.slot(index) {
            Some(slot) => {
                self.write_priority(slot, priority);
                true
            }
            None => {
                self.stale_updates += 1;
                false
            }
        })
    }

    /// Sampling probability `p^alpha / sum p^alpha` of a live entry.
    pub fn probability(&self, index: u64) -> Option<f64> {
        self.slot(index).map(|s| self.tree.get(s) / self.tree.total())
    }

    /// Draws `m` entries with replacement, one uniform variate each.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, beta: f64, rng: &mut R) -> Result<SampledBatch, ReplayError> {
        let uniforms: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        self.sample_with_uniforms(&uniforms, beta)
    }

    /// Sampling driven by caller-supplied variates in `[0, 1)`.
    pub fn sample_with_uniforms(&self, uniforms: &[f64], beta: f64) -> Result<SampledBatch, ReplayError> {
        if uniforms.len() > self.len() || self.is_empty() {
            return Err(ReplayError::Insufficient { requested: uniforms.len(), available: self.len() });
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(ReplayError::BadBeta(beta));
        }
        let total = self.tree.total();
        let size = self.len() as f64;
        let mut samples: Vec<Sample> = uniforms
            .iter()
            .map(|&u| {
                let slot = self.tree.find(u * total).min(self.len() - 1);
                let probability = self.tree.get(slot) / total;
                Sample {
                    index: self.index_of_slot(slot),
                    transition: self.slots[slot].clone(),
                    probability,
                    weight: (size * probability).powf(-beta),
                }
            })
            .collect();
        let max_weight = match self.config.normalization {
            IsNormalization::Batch => samples.iter().map(|s| s.weight).fold(0.0, f64::max),
            IsNormalization::Memory => {
                let min_p = (0..self.len()).map(|s| self.tree.get(s)).fold(f64::INFINITY, f64::min) / total;
                (size * min_p).powf(-beta)
            }
        };
        for s in &mut samples {
            s.weight /= max_weight;
        }
        Ok(SampledBatch { samples })
    }

    fn index_of_slot(&self, slot: usize) -> u64 {
        let cap = self.config.capacity as u64;
        let newest = self.inserted - 1;
        // The unique live index congruent to `slot` modulo capacity.
        let base = newest - newest % cap + slot as u64;
        if base > newest {
            base - cap
        } else {
            base
        }
    }

    /// Sum of `p^alpha` over live entries recomputed by a linear pass.
    pub fn naive_total(&self) -> f64 {
        self.priorities.iter().map(|p| p.powf(self.config.alpha)).sum()
    }
}

/// Linear annealing from `start` to `end` over `horizon` steps, then held.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule { start: 0.4, end: 1.0, horizon: 19_000 }
    }
}

impl BetaSchedule {
    pub fn value(&self, t: u64) -> f64 {
        if t >= self.horizon {
            return self.end;
        }
        self.start + (self.end - self.start) * (t as f64 / self.horizon as f64)
    }
}

/// Anneals beta at step `t`.
pub fn anneal_beta(schedule: &BetaSchedule, t: u64) -> f64 {
    schedule.value(t)
}
