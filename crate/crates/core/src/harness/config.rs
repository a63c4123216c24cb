use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agent::{AgentConfig, Algorithm, EpsilonSchedule, RewardWeights};
use crate::netstate::{PairWeight, QueueModel, TrafficProfile};
use crate::neural::{Huber, RmsPropConfig};
use crate::replay::{BetaSchedule, IsNormalization, ReplayConfig};
use crate::topology::{QosFilter, MAX_DEPTH};

/// Replay, optimisation and exploration settings shared by every leader.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub memory_size: usize,
    pub batch_size: usize,
    pub replay_period: u64,
    pub target_update_period: u64,
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    pub epsilon_decay: f64,
    pub priority_epsilon: f64,
    pub is_normalization: IsNormalization,
    pub gamma: f64,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_stabilizer: f64,
    pub huber_threshold: f64,
    pub hidden: Vec<usize>,
    pub max_candidates: usize,
    /// Leading group-vector level kept in the observation.
    pub k: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            memory_size: 1000,
            batch_size: 32,
            replay_period: 1,
            target_update_period: 250,
            alpha: 0.5,
            beta_start: 0.4,
            beta_end: 1.0,
            epsilon_min: 0.01,
            epsilon_max: 1.0,
            epsilon_decay: 0.01,
            priority_epsilon: 0.01,
            is_normalization: IsNormalization::Batch,
            gamma: 0.9,
            learning_rate: 1e-3,
            rms_decay: 0.9,
            rms_stabilizer: 1e-7,
            huber_threshold: 1.0,
            hidden: vec![32, 32],
            max_candidates: 8,
            k: 1,
        }
    }
}

/// Deferred global signal settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    /// Steps between a decision and the arrival of its signal.
    pub delay: u64,
    /// Steps after which a decision commits without its signal; ten times the
    /// delay when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_horizon: Option<u64>,
    /// Source satisfaction per edge id; a path's signal is the minimum over
    /// its edges.
    pub preferences: BTreeMap<String, f64>,
    /// Satisfaction for edges without an entry.
    pub default_satisfaction: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            delay: 1,
            fallback_horizon: None,
            preferences: BTreeMap::from([("1".into(), 1.0), ("2".into(), 0.5), ("3".into(), 0.3)]),
            default_satisfaction: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Relative paths resolve against the config file's directory.
    pub topology: PathBuf,
    pub seed: u64,
    /// Number of routing requests to simulate.
    pub horizon: u64,
    pub algorithm: Algorithm,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub traffic: TrafficProfile,
    pub rewards: RewardWeights,
    pub learning: LearningConfig,
    pub feedback: FeedbackConfig,
    pub queue: QueueModel,
    pub qos: QosFilter,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            topology: PathBuf::from("topologies/three_link.toml"),
            seed: 1,
            horizon: 20_000,
            algorithm: Algorithm::Ddqn,
            output: None,
            traffic: TrafficProfile {
                pairs: vec![PairWeight { source: "u1".into(), destination: "u16".into(), weight: 1.0 }],
                ..TrafficProfile::default()
            },
            rewards: RewardWeights::default(),
            learning: LearningConfig::default(),
            feedback: FeedbackConfig::default(),
            queue: QueueModel::default(),
            qos: QosFilter::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    /// Reads a config file and anchors a relative topology path at the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if config.topology.is_relative() {
            if let Some(dir) = path.parent() {
                config.topology = dir.join(&config.topology);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let l = &self.learning;
        if self.horizon == 0 {
            return Err(invalid("horizon must be positive"));
        }
        if l.memory_size == 0 || l.batch_size == 0 || l.batch_size > l.memory_size {
            return Err(invalid("need 0 < batch_size <= memory_size"));
        }
        if l.replay_period == 0 || l.target_update_period == 0 {
            return Err(invalid("replay and target update periods must be positive"));
        }
        if !(l.alpha.is_finite() && l.alpha >= 0.0) {
            return Err(invalid("alpha must be non-negative"));
        }
        if !(0.0 <= l.beta_start && l.beta_start <= l.beta_end && l.beta_end <= 1.0) {
            return Err(invalid("need 0 <= beta_start <= beta_end <= 1"));
        }
        if !(0.0 <= l.epsilon_min && l.epsilon_min <= l.epsilon_max && l.epsilon_max <= 1.0 && l.epsilon_decay >= 0.0) {
            return Err(invalid("need 0 <= epsilon_min <= epsilon_max <= 1 and epsilon_decay >= 0"));
        }
        if !(l.priority_epsilon > 0.0 && l.priority_epsilon.is_finite()) {
            return Err(invalid("priority_epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&l.gamma) {
            return Err(invalid("gamma must be in [0, 1]"));
        }
        if !(l.learning_rate > 0.0 && l.rms_stabilizer > 0.0 && (0.0..1.0).contains(&l.rms_decay)) {
            return Err(invalid("need learning_rate > 0, rms_stabilizer > 0, rms_decay in [0, 1)"));
        }
        if l.huber_threshold.is_nan() || l.huber_threshold <= 0.0 {
            return Err(invalid("huber_threshold must be positive"));
        }
        if l.hidden.is_empty() || l.hidden.contains(&0) || l.max_candidates == 0 {
            return Err(invalid("hidden layers and max_candidates must be positive"));
        }
        if l.k == 0 || l.k > MAX_DEPTH {
            return Err(invalid(format!("k must be in 1..={MAX_DEPTH}")));
        }
        self.rewards.validate().map_err(|e| invalid(e.to_string()))?;
        let t = &self.traffic;
        if t.duration_min == 0 || t.duration_min > t.duration_max || t.requests_per_step == 0 {
            return Err(invalid("need 1 <= duration_min <= duration_max and requests_per_step >= 1"));
        }
        if !t.pairs.iter().any(|p| p.weight > 0.0) {
            return Err(invalid("traffic needs at least one pair with positive weight"));
        }
        let f = &self.feedback;
        for (edge, y) in &f.preferences {
            if edge.parse::<u32>().is_err() {
                return Err(invalid(format!("preference key {edge:?} is not an edge id")));
            }
            if !(0.0..=1.0).contains(y) {
                return Err(invalid(format!("preference for edge {edge} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&f.default_satisfaction) {
            return Err(invalid("default_satisfaction outside [0, 1]"));
        }
        Ok(())
    }

    /// Agent settings; beta anneals over the steps left after warm-up.
    pub fn agent_config(&self) -> AgentConfig {
        let l = &self.learning;
        AgentConfig {
            hidden: l.hidden.clone(),
            max_candidates: l.max_candidates,
            replay: ReplayConfig {
                capacity: l.memory_size,
                alpha: l.alpha,
                priority_epsilon: l.priority_epsilon,
                normalization: l.is_normalization,
            },
            batch_size: l.batch_size,
            replay_period: l.replay_period,
            target_update_period: l.target_update_period,
            beta: BetaSchedule {
                start: l.beta_start,
                end: l.beta_end,
                horizon: self.horizon.saturating_sub(l.memory_size as u64),
            },
            epsilon: EpsilonSchedule { min: l.epsilon_min, max: l.epsilon_max, decay: l.epsilon_decay },
            gamma: l.gamma,
            optimizer: RmsPropConfig {
                learning_rate: l.learning_rate,
                decay: l.rms_decay,
                stabilizer: l.rms_stabilizer,
            },
            huber: Huber { threshold: l.huber_threshold },
            feedback_delay: self.feedback.delay,
            fallback_horizon: self.feedback.fallback_horizon,
            algorithm: self.algorithm,
            rewards: self.rewards,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c = RunConfig::from_toml_str("seed = 9\n[learning]\ngamma = 0.5\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.learning.gamma, 0.5);
        assert_eq!(c.learning.memory_size, 1000);
        let c = RunConfig::from_toml_str("[traffic]\npairs = [{ source = \"u2\", destination = \"u9\" }]\n").unwrap();
        assert_eq!(c.traffic.requests_per_step, 10);
        assert_eq!(c.traffic.pairs[0].weight, 1.0);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = RunConfig::default();
        c.learning.batch_size = 2000;
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        let mut c = RunConfig::default();
        c.feedback.preferences.insert("x".into(), 0.5);
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.rewards.w3 = -1.0;
        assert!(c.validate().is_err());
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn beta_horizon_excludes_warmup() {
        let c = RunConfig::default();
        assert_eq!(c.agent_config().beta.horizon, 19_000);
    }
}
