use serde::{Deserialize, Serialize};

/// Exponentially decaying exploration rate
/// `min + (max - min) * exp(-decay * t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub min: f64,
    pub max: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { min: 0.01, max: 1.0, decay: 0.01 }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, t: u64) -> f64 {
        self.min + (self.max - self.min) * (-self.decay * t as f64).exp()
    }
}
