//! Composite reward: a deferred global term from the source's satisfaction
//! signal plus an immediate local term computed by the leader.

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::netstate::LinkState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    /// Global (source satisfaction).
    pub w1: f64,
    /// Chosen link at or under the utilization threshold.
    pub w2: f64,
    /// Queuing plus transmission delay.
    pub w3: f64,
    /// Loss probability.
    pub w4: f64,
    /// Load balance across the candidate set.
    pub w5: f64,
    pub utilization_threshold: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { w1: 2.0, w2: 10.0, w3: 0.0, w4: 0.0, w5: 20.0, utilization_threshold: 0.79 }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), AgentError> {
        let ws = [self.w1, self.w2, self.w3, self.w4, self.w5];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(AgentError::BadWeights("weights must be finite and non-negative".into()));
        }
        if !(self.utilization_threshold > 0.0 && self.utilization_threshold <= 1.0) {
            return Err(AgentError::BadWeights("utilization threshold must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Local reward for choosing `candidates[chosen]`, given the leader's
/// queuing delay. The balance term uses the mean utilization of the whole
/// candidate set.
pub fn local_reward(
    weights: &RewardWeights,
    chosen: usize,
    candidates: &[LinkState],
    queuing_delay: f64,
) -> Result<f64, AgentError> {
    if candidates.is_empty() {
        return Err(AgentError::NoCandidates);
    }
    let link = candidates.get(chosen).ok_or(AgentError::ActionOutOfRange { action: chosen, live: candidates.len() })?;
    let mean = candidates.iter().map(|l| l.utilization).sum::<f64>() / candidates.len() as f64;
    let spread: f64 = candidates.iter().map(|l| (l.utilization - mean).abs()).sum();
    let under = if link.utilization <= weights.utilization_threshold { 1.0 } else { 0.0 };
    Ok(weights.w2 * under - weights.w3 * (queuing_delay + link.transmission_delay) - weights.w4 * link.loss_probability
        + weights.w5 * (-spread).exp())
}

/// `w1 * y` for a satisfaction signal `y` in `[0, 1]`.
pub fn global_reward(weights: &RewardWeights, y: f64) -> Result<f64, AgentError> {
    if !(0.0..=1.0).contains(&y) {
        return Err(AgentError::BadSignal(y));
    }
    Ok(weights.w1 * y)
}
