//! Group-leader learning agent.
//!
//! Each call to [`Agent::decide`] is one agent step: the new observation
//! completes the previous decision, resolved decisions enter the replay
//! memory, the target network is synchronised and a replay update runs on
//! schedule, and finally an action is chosen epsilon-greedily.
//!
//! Until the memory holds `warmup` transitions the agent acts uniformly at
//! random and does not learn.

mod encode;
mod pending;
mod reward;
mod schedule;
mod tabular;

pub use encode::{decode_state, encode_state, LinkObservation, Observation, StateLayout, MASK_SENTINEL};
pub use pending::{resolve_pending, Committed, PendingGlobal};
pub use reward::{global_reward, local_reward, RewardWeights};
pub use schedule::EpsilonSchedule;
pub use tabular::{tabular_double_q_update, tabular_q_update, DoubleTabularQ, TabularQ};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{Gradients, Huber, NeuralError, QNetwork, RmsProp, RmsPropConfig};
use crate::replay::{BetaSchedule, ReplayConfig, ReplayError, ReplayMemory, Transition};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{got} candidates exceed the configured maximum of {max}")]
    TooManyCandidates { got: usize, max: usize },
    #[error("expected {expected} group entries per vector, got {got}")]
    GroupEntries { expected: usize, got: usize },
    #[error("candidate set is empty")]
    NoCandidates,
    #[error("action {action} outside the {live} live candidates")]
    ActionOutOfRange { action: usize, live: usize },
    #[error("satisfaction signal {0} outside [0, 1]")]
    BadSignal(f64),
    #[error("no pending decision with stamp {0}")]
    UnknownDecision(u64),
    #[error("invalid reward weights: {0}")]
    BadWeights(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

/// How the bootstrap value is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Online network selects the next action, target network evaluates it.
    #[default]
    Ddqn,
    /// Target network both selects and evaluates.
    Dqn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub max_candidates: usize,
    pub replay: ReplayConfig,
    pub batch_size: usize,
    pub replay_period: u64,
    pub target_update_period: u64,
    pub beta: BetaSchedule,
    pub epsilon: EpsilonSchedule,
    pub gamma: f64,
    pub optimizer: RmsPropConfig,
    pub huber: Huber,
    pub feedback_delay: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_horizon: Option<u64>,
    pub algorithm: Algorithm,
    pub rewards: RewardWeights,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![32, 32],
            max_candidates: 8,
            replay: ReplayConfig::default(),
            batch_size: 32,
            replay_period: 1,
            target_update_period: 250,
            beta: BetaSchedule::default(),
            epsilon: EpsilonSchedule::default(),
            gamma: 0.9,
            optimizer: RmsPropConfig::default(),
            huber: Huber::default(),
            feedback_delay: 1,
            fallback_horizon: None,
            algorithm: Algorithm::Ddqn,
            rewards: RewardWeights::default(),
        }
    }
}

/// Lowest-index argmax over the first `live` entries.
pub fn argmax_live(q: &[f64], live: usize) -> usize {
    let mut best = 0;
    for a in 1..live.min(q.len()) {
        if q[a] > q[best] {
            best = a;
        }
    }
    best
}

/// Epsilon-greedy choice over the first `live` actions: the greedy action
/// has probability `1 - eps + eps / live`, every other one `eps / live`.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], live: usize, epsilon: f64, rng: &mut R) -> Result<usize, AgentError> {
    if live == 0 {
        return Err(AgentError::NoCandidates);
    }
    if live > q.len() {
        return Err(AgentError::TooManyCandidates { got: live, max: q.len() });
    }
    if rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..live))
    } else {
        Ok(argmax_live(q, live))
    }
}

/// Bootstrapped target for one transition.
pub fn td_target(
    online: &QNetwork,
    target: &QNetwork,
    tr: &Transition,
    gamma: f64,
    algorithm: Algorithm,
) -> Result<f64, AgentError> {
    if tr.terminal || tr.next_live == 0 {
        return Ok(tr.reward);
    }
    let evaluated = target.forward(&tr.next_state)?;
    let next_value = match algorithm {
        Algorithm::Ddqn => {
            let selected = online.forward(&tr.next_state)?;
            evaluated[argmax_live(&selected, tr.next_live)]
        }
        Algorithm::Dqn => evaluated[argmax_live(&evaluated, tr.next_live)],
    };
    Ok(tr.reward + gamma * next_value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LearnDiagnostics {
    pub loss: f64,
    pub mean_abs_td: f64,
}

/// Result of one agent step.
#[derive(Clone, Debug)]
pub struct Decision {
    pub action: usize,
    pub stamp: u64,
    pub explored: bool,
    pub epsilon: f64,
    pub beta: f64,
    pub learned: Option<LearnDiagnostics>,
    pub committed: Vec<Committed>,
    pub local_reward: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AgentCounters {
    pub decisions: u64,
    pub learn_steps: u64,
    pub skipped_learns: u64,
    pub target_syncs: u64,
    pub stored: u64,
}

#[derive(Clone, Debug)]
pub struct Agent {
    config: AgentConfig,
    layout: StateLayout,
    warmup: usize,
    online: QNetwork,
    target: QNetwork,
    optimizer: RmsProp,
    memory: ReplayMemory,
    pending: PendingGlobal,
    t: u64,
    learn_start: Option<u64>,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    counters: AgentCounters,
}

impl Agent {
    /// `warmup` is the number of stored transitions required before learning
    /// starts; both networks start from the same weights drawn from
    /// `init_rng`.
    pub fn new(
        config: AgentConfig,
        layout: StateLayout,
        warmup: usize,
        init_rng: &mut ChaCha8Rng,
        explore_rng: ChaCha8Rng,
        replay_rng: ChaCha8Rng,
    ) -> Result<Self, AgentError> {
        config.rewards.validate()?;
        let mut sizes = vec![layout.width()];
        sizes.extend(&config.hidden);
        sizes.push(layout.max_candidates);
        let online = QNetwork::new(&sizes, init_rng)?;
        let target = online.clone();
        let optimizer = RmsProp::new(config.optimizer, &online);
        let memory = ReplayMemory::new(config.replay)?;
        let pending = PendingGlobal::new(config.feedback_delay, config.fallback_horizon);
        Ok(Agent {
            config,
            layout,
            warmup,
            online,
            target,
            optimizer,
            memory,
            pending,
            t: 0,
            learn_start: None,
            explore_rng,
            replay_rng,
            counters: AgentCounters::default(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn pending(&self) -> &PendingGlobal {
        &self.pending
    }

    pub fn counters(&self) -> AgentCounters {
        self.counters
    }

    /// Agent step counter.
    pub fn step(&self) -> u64 {
        self.t
    }

    pub fn learning_started(&self) -> bool {
        self.learn_start.is_some()
    }

    /// Steps since learning began, the clock of both annealing schedules.
    fn learn_clock(&self) -> u64 {
        self.learn_start.map_or(0, |s| self.t - s)
    }

    pub fn epsilon(&self) -> f64 {
        if self.learn_start.is_some() {
            self.config.epsilon.value(self.learn_clock())
        } else {
            1.0
        }
    }

    pub fn beta(&self) -> f64 {
        self.config.beta.value(self.learn_clock())
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.online.forward(state)?)
    }

    /// One agent step on `state` with `live` candidates. `local_reward` maps
    /// the chosen action to its immediate reward; the decision then waits for
    /// its global signal.
    pub fn decide(
        &mut self,
        state: Vec<f64>,
        live: usize,
        local_reward: impl FnOnce(usize) -> Result<f64, AgentError>,
    ) -> Result<Decision, AgentError> {
        if live == 0 {
            return Err(AgentError::NoCandidates);
        }
        if live > self.layout.max_candidates {
            return Err(AgentError::TooManyCandidates { got: live, max: self.layout.max_candidates });
        }
        self.pending.observe_next(&state, live);
        let committed = self.pending.resolve(self.t, &self.config.rewards)?;
        for c in &committed {
            self.memory.store(c.transition.clone());
            self.counters.stored += 1;
        }

        if self.learn_start.is_none() && self.memory.len() >= self.warmup {
            self.learn_start = Some(self.t);
        }
        let mut learned = None;
        if self.learn_start.is_some() {
            if self.t.is_multiple_of(self.config.target_update_period) {
                self.sync_target();
            }
            if self.t.is_multiple_of(self.config.replay_period) {
                learned = self.learn_step()?;
            }
        }

        let epsilon = self.epsilon();
        let beta = self.beta();
        let (action, explored) = if self.learn_start.is_some() {
            let q = self.online.forward(&state)?;
            let a = select_action(&q, live, epsilon, &mut self.explore_rng)?;
            (a, a != argmax_live(&q, live))
        } else {
            (self.explore_rng.random_range(0..live), true)
        };

        let reward = local_reward(action)?;
        let stamp = self.t;
        self.pending.record(stamp, state, action, reward);
        self.t += 1;
        self.counters.decisions += 1;
        Ok(Decision { action, stamp, explored, epsilon, beta, learned, committed, local_reward: reward })
    }

    /// Delivers the source's satisfaction signal for decision `stamp`.
    pub fn receive_signal(&mut self, stamp: u64, y: f64) -> Result<(), AgentError> {
        self.pending.deliver(stamp, y)
    }

    pub fn sync_target(&mut self) {
        self.target.clone_from(&self.online);
        self.counters.target_syncs += 1;
    }

    /// One prioritized replay update. Returns `None` (and counts a skip) when
    /// the memory holds fewer than a batch.
    pub fn learn_step(&mut self) -> Result<Option<LearnDiagnostics>, AgentError> {
        let m = self.config.batch_size;
        if self.memory.len() < m || m == 0 {
            self.counters.skipped_learns += 1;
            return Ok(None);
        }
        let batch = self.memory.sample(m, self.beta(), &mut self.replay_rng)?;
        let mut delta = Gradients::zeros_like(&self.online);
        let mut loss = 0.0;
        let mut abs_td = 0.0;
        let mut priorities = Vec::with_capacity(m);
        for s in &batch.samples {
            let y = td_target(&self.online, &self.target, &s.transition, self.config.gamma, self.config.algorithm)?;
            let g =
                self.online.td_backward(&s.transition.state, s.transition.action, y, s.weight, self.config.huber)?;
            delta.add_assign(&g.gradients);
            loss += g.loss;
            abs_td += g.td_error.abs();
            priorities.push((s.index, g.td_error));
        }
        self.optimizer.apply_update(&mut self.online, &delta)?;
        for (index, td) in priorities {
            self.memory.update_priority(index, td);
        }
        self.counters.learn_steps += 1;
        Ok(Some(LearnDiagnostics { loss: loss / m as f64, mean_abs_td: abs_td / m as f64 }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Dense;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Single linear layer whose output is its bias, independent of input.
    fn constant_net(values: &[f64], inputs: usize) -> QNetwork {
        QNetwork::from_layers(vec![Dense {
            inputs,
            outputs: values.len(),
            weights: vec![0.0; inputs * values.len()],
            biases: values.to_vec(),
        }])
        .unwrap()
    }

    fn transition(reward: f64) -> Transition {
        Transition { state: vec![0.0], action: 0, reward, next_state: vec![1.0], next_live: 3, terminal: false }
    }

    #[test]
    fn ddqn_decouples_selection_from_evaluation() {
        // Online prefers action 1; target values action 1 at 0.7 but its own
        // best (action 2) at 0.9.
        let online = constant_net(&[0.1, 0.8, 0.2], 1);
        let target = constant_net(&[0.3, 0.7, 0.9], 1);
        let tr = transition(1.0);
        let ddqn = td_target(&online, &target, &tr, 0.5, Algorithm::Ddqn).unwrap();
        let dqn = td_target(&online, &target, &tr, 0.5, Algorithm::Dqn).unwrap();
        assert_eq!(ddqn, 1.0 + 0.5 * 0.7);
        assert_eq!(dqn, 1.0 + 0.5 * 0.9);
    }

    #[test]
    fn zero_gamma_target_is_reward() {
        let net = constant_net(&[5.0, 6.0], 1);
        let tr = Transition { next_live: 2, ..transition(2.5) };
        assert_eq!(td_target(&net, &net, &tr, 0.0, Algorithm::Ddqn).unwrap(), 2.5);
        let terminal = Transition { terminal: true, ..tr };
        assert_eq!(td_target(&net, &net, &terminal, 0.9, Algorithm::Ddqn).unwrap(), 2.5);
    }

    #[test]
    fn masked_actions_ignored_in_bootstrap() {
        let net = constant_net(&[1.0, 2.0, 50.0], 1);
        let tr = Transition { next_live: 2, ..transition(0.0) };
        assert_eq!(td_target(&net, &net, &tr, 1.0, Algorithm::Dqn).unwrap(), 2.0);
    }

    #[test]
    fn greedy_when_epsilon_zero() {
        let q = [0.1, 0.5, 0.5, 9.0];
        let mut r = rng(0);
        for _ in 0..100 {
            assert_eq!(select_action(&q, 3, 0.0, &mut r).unwrap(), 1);
        }
        assert!(select_action(&q, 0, 0.0, &mut r).is_err());
    }

    #[test]
    fn epsilon_greedy_frequencies() {
        let q = [0.0, 0.0, 1.0, 7.0];
        let mut r = rng(11);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[select_action(&q, 3, 0.3, &mut r).unwrap()] += 1;
        }
        assert_eq!(counts[3], 0);
        let f = |c: usize| c as f64 / n as f64;
        assert!((f(counts[2]) - 0.8).abs() < 0.01);
        assert!((f(counts[0]) - 0.1).abs() < 0.01);
        assert!((f(counts[1]) - 0.1).abs() < 0.01);
    }

    fn small_agent(warmup: usize, config: AgentConfig) -> Agent {
        let layout = StateLayout::new(1, 1, 3, 10);
        Agent::new(config, layout, warmup, &mut rng(1), rng(2), rng(3)).unwrap()
    }

    fn state(x: f64) -> Vec<f64> {
        let mut s = vec![0.1, 0.2, 0.0];
        s.extend([x, 0.0, 0.0, 0.0, 0.0, 0.0]);
        s
    }

    #[test]
    fn warmup_then_learning() {
        let config = AgentConfig {
            replay: ReplayConfig { capacity: 50, ..Default::default() },
            batch_size: 8,
            ..Default::default()
        };
        let mut agent = small_agent(20, config);
        for i in 0..60 {
            let d = agent.decide(state(i as f64 / 60.0), 3, |a| Ok(a as f64)).unwrap();
            agent.receive_signal(d.stamp, 1.0).unwrap();
            if !agent.learning_started() {
                assert!(d.learned.is_none());
                assert_eq!(d.epsilon, 1.0);
            }
        }
        assert!(agent.learning_started());
        let c = agent.counters();
        assert!(c.learn_steps > 0);
        assert_eq!(c.decisions, 60);
        // The final decision is still pending its successor state.
        assert_eq!(c.stored, 59);
        assert!(agent.online().is_finite());
    }

    #[test]
    fn target_tracks_online_on_period() {
        let config = AgentConfig {
            replay: ReplayConfig { capacity: 100, ..Default::default() },
            batch_size: 4,
            target_update_period: 5,
            ..Default::default()
        };
        let mut agent = small_agent(4, config);
        for i in 0..40 {
            let d = agent.decide(state(0.5), 3, |_| Ok(1.0)).unwrap();
            agent.receive_signal(d.stamp, 0.5).unwrap();
            if agent.learning_started() && i % 5 == 0 {
                // Synced before the update at this step, so target equals the
                // parameters online had at the start of the step.
                assert_ne!(agent.online(), agent.target());
            }
        }
        agent.sync_target();
        assert_eq!(agent.online(), agent.target());
    }

    #[test]
    fn decide_rejects_bad_candidate_counts() {
        let mut agent = small_agent(1, AgentConfig::default());
        assert!(matches!(agent.decide(state(0.0), 0, |_| Ok(0.0)), Err(AgentError::NoCandidates)));
        assert!(matches!(agent.decide(state(0.0), 4, |_| Ok(0.0)), Err(AgentError::TooManyCandidates { .. })));
    }

    #[test]
    fn actions_stay_within_live_set() {
        let mut agent = small_agent(5, AgentConfig { batch_size: 4, ..Default::default() });
        for i in 0..200 {
            let live = 1 + i % 3;
            let d = agent.decide(state(0.3), live, |_| Ok(1.0)).unwrap();
            assert!(d.action < live);
            agent.receive_signal(d.stamp, 1.0).unwrap();
        }
    }
}
