//! Decisions waiting for their deferred global signal.
//!
//! A decision taken at agent step `t0` becomes a transition once the next
//! observation exists and either the source's signal has arrived (at
//! `t0 + delay`) or the fallback horizon has passed, in which case only the
//! local reward is used.

use std::collections::VecDeque;

use super::reward::{global_reward, RewardWeights};
use super::AgentError;
use crate::replay::Transition;

#[derive(Clone, Debug)]
struct Entry {
    stamp: u64,
    state: Vec<f64>,
    action: usize,
    local_reward: f64,
    next: Option<(Vec<f64>, usize)>,
    /// `(y, arrival step)`.
    signal: Option<(f64, u64)>,
}

/// A resolved decision, ready for the replay memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Committed {
    pub stamp: u64,
    pub committed_at: u64,
    pub action: usize,
    pub signal: Option<f64>,
    pub local_reward: f64,
    pub reward: f64,
    pub transition: Transition,
}

#[derive(Clone, Debug)]
pub struct PendingGlobal {
    delay: u64,
    fallback_horizon: u64,
    entries: VecDeque<Entry>,
    duplicate_signals: u64,
    fallbacks: u64,
}

impl PendingGlobal {
    /// `fallback_horizon` defaults to ten times the delay (at least one step).
    pub fn new(delay: u64, fallback_horizon: Option<u64>) -> Self {
        PendingGlobal {
            delay,
            fallback_horizon: fallback_horizon.unwrap_or((10 * delay).max(1)).max(delay),
            entries: VecDeque::new(),
            duplicate_signals: 0,
            fallbacks: 0,
        }
    }

    pub fn delay(&self) -> u64 {
        self.delay
    }

    pub fn fallback_horizon(&self) -> u64 {
        self.fallback_horizon
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn duplicate_signals(&self) -> u64 {
        self.duplicate_signals
    }

    pub fn fallbacks(&self) -> u64 {
        self.fallbacks
    }

    pub fn record(&mut self, stamp: u64, state: Vec<f64>, action: usize, local_reward: f64) {
        self.entries.push_back(Entry { stamp, state, action, local_reward, next: None, signal: None });
    }

    /// Attaches the leader's newest observation as the successor state of the
    /// most recent decision still missing one.
    pub fn observe_next(&mut self, state: &[f64], live: usize) {
        if let Some(e) = self.entries.iter_mut().rev().find(|e| e.next.is_none()) {
            e.next = Some((state.to_vec(), live));
        }
    }

    /// Delivers the source's signal for the decision taken at `stamp`. It
    /// becomes visible `delay` steps after the decision. A repeated signal is
    /// ignored and counted.
    pub fn deliver(&mut self, stamp: u64, y: f64) -> Result<(), AgentError> {
        if !(0.0..=1.0).contains(&y) {
            return Err(AgentError::BadSignal(y));
        }
        let delay = self.delay;
        let entry = self.entries.iter_mut().find(|e| e.stamp == stamp).ok_or(AgentError::UnknownDecision(stamp))?;
        if entry.signal.is_some() {
            self.duplicate_signals += 1;
        } else {
            entry.signal = Some((y, stamp + delay));
        }
        Ok(())
    }

    /// Commits every entry that is complete at step `now`, oldest first.
    pub fn resolve(&mut self, now: u64, weights: &RewardWeights) -> Result<Vec<Committed>, AgentError> {
        let mut done = Vec::new();
        let mut keep = VecDeque::with_capacity(self.entries.len());
        for e in self.entries.drain(..) {
            let Some((next_state, next_live)) = &e.next else {
                keep.push_back(e);
                continue;
            };
            let arrived = e.signal.filter(|&(_, at)| at <= now).map(|(y, _)| y);
            let expired = now >= e.stamp + self.fallback_horizon;
            if arrived.is_none() && !expired {
                keep.push_back(e);
                continue;
            }
            let reward = match arrived {
                Some(y) => global_reward(weights, y)? + e.local_reward,
                None => {
                    self.fallbacks += 1;
                    e.local_reward
                }
            };
            done.push(Committed {
                stamp: e.stamp,
                committed_at: now,
                action: e.action,
                signal: arrived,
                local_reward: e.local_reward,
                reward,
                transition: Transition {
                    state: e.state,
                    action: e.action,
                    reward,
                    next_state: next_state.clone(),
                    next_live: *next_live,
                    terminal: false,
                },
            });
        }
        self.entries = keep;
        Ok(done)
    }
}

/// Resolves `pending` at `now`; see [`PendingGlobal::resolve`].
pub fn resolve_pending(
    pending: &mut PendingGlobal,
    now: u64,
    weights: &RewardWeights,
) -> Result<Vec<Committed>, AgentError> {
    pending.resolve(now, weights)
}
