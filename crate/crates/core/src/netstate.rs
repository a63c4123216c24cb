//! Dynamic network state under traffic: flow admission and expiry on a
//! discrete step clock, per-link utilization and the node delay model.
//!
//! Every flow is one unit of rate, so a link's utilization is its active flow
//! count divided by its capacity. Oversubscription is allowed.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{EdgeId, Network, NodeId, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetStateError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("path of flow {flow} does not connect its source to its destination")]
    BrokenPath { flow: u64 },
    #[error("traffic profile has no source-destination pairs with positive weight")]
    EmptyPairs,
    #[error("invalid duration range [{0}, {1}]")]
    BadDurations(u64, u64),
    #[error("requests per step must be at least 1")]
    NoRequests,
}

/// Discrete simulation time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clock {
    pub t: u64,
}

/// A routing request before a path is assigned.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowRequest {
    pub id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub duration: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub start: u64,
    pub duration: u64,
    pub path: Vec<EdgeId>,
}

impl Flow {
    pub fn expires_at(&self) -> u64 {
        self.start + self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkState {
    pub edge: EdgeId,
    pub capacity: f64,
    pub active_flows: u64,
    pub utilization: f64,
    pub transmission_delay: f64,
    pub loss_probability: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NodeState {
    pub node: NodeId,
    pub queuing_delay: f64,
}

/// Node queuing-delay provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum QueueModel {
    Constant {
        delay: f64,
    },
    /// Delay grows linearly with the number of requests the leader still has
    /// awaiting feedback.
    PendingLinear {
        per_request: f64,
    },
}

impl Default for QueueModel {
    fn default() -> Self {
        QueueModel::Constant { delay: 0.0 }
    }
}

impl QueueModel {
    pub fn queuing_delay(&self, pending_requests: usize) -> f64 {
        match *self {
            QueueModel::Constant { delay } => delay.max(0.0),
            QueueModel::PendingLinear { per_request } => (per_request * pending_requests as f64).max(0.0),
        }
    }
}

/// Mutable link occupancy plus the live flow set.
#[derive(Clone, Debug)]
pub struct NetState {
    clock: Clock,
    edge_ids: Vec<EdgeId>,
    capacity: Vec<f64>,
    delay: Vec<f64>,
    loss: Vec<f64>,
    active: Vec<u64>,
    utilization: Vec<f64>,
    /// Live flows with the edge positions they occupy.
    flows: Vec<(Flow, Vec<usize>)>,
}

impl NetState {
    pub fn new(net: &Network) -> Self {
        let edges = net.edges();
        NetState {
            clock: Clock::default(),
            edge_ids: edges.iter().map(|e| e.id).collect(),
            capacity: edges.iter().map(|e| e.capacity).collect(),
            delay: edges.iter().map(|e| e.delay).collect(),
            loss: edges.iter().map(|e| e.loss).collect(),
            active: vec![0; edges.len()],
            utilization: vec![0.0; edges.len()],
            flows: Vec::new(),
        }
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn live_flows(&self) -> impl Iterator<Item = &Flow> {
        self.flows.iter().map(|(f, _)| f)
    }

    /// Places a flow on `path` starting at the current step.
    pub fn admit_flow(&mut self, net: &Network, request: &FlowRequest, path: Vec<EdgeId>) -> Result<(), NetStateError> {
        let mut positions = Vec::with_capacity(path.len());
        let mut at = request.source;
        for &id in &path {
            let edge = net.edge(id)?;
            if edge.from != at {
                return Err(NetStateError::BrokenPath { flow: request.id });
            }
            at = edge.to;
            positions.push(net.edge_position(id).expect("edge exists"));
        }
        if at != request.destination {
            return Err(NetStateError::BrokenPath { flow: request.id });
        }
        for &i in &positions {
            self.active[i] += 1;
            self.recompute(i);
        }
        let flow = Flow {
            id: request.id,
            source: request.source,
            destination: request.destination,
            start: self.clock.t,
            duration: request.duration,
            path,
        };
        self.flows.push((flow, positions));
        Ok(())
    }

    /// Moves the clock forward one step and retires expired flows.
    pub fn advance(&mut self) {
        self.clock.t += 1;
        let now = self.clock.t;
        let mut touched = Vec::new();
        self.flows.retain(|(flow, positions)| {
            if flow.expires_at() <= now {
                touched.extend_from_slice(positions);
                false
            } else {
                true
            }
        });
        for i in touched {
            self.active[i] -= 1;
            self.recompute(i);
        }
    }

    fn recompute(&mut self, i: usize) {
        self.utilization[i] = self.active[i] as f64 / self.capacity[i];
    }

    fn position(&self, id: EdgeId) -> Result<usize, NetStateError> {
        self.edge_ids.binary_search(&id).map_err(|_| TopologyError::UnknownEdge(id).into())
    }

    pub fn link_state(&self, id: EdgeId) -> Result<LinkState, NetStateError> {
        let i = self.position(id)?;
        Ok(LinkState {
            edge: id,
            capacity: self.capacity[i],
            active_flows: self.active[i],
            utilization: self.utilization[i],
            transmission_delay: self.delay[i],
            loss_probability: self.loss[i],
        })
    }

    /// Read-only view of the given links at the current step, ascending edge
    /// id.
    pub fn snapshot_links(&self, edges: &[EdgeId]) -> Result<Vec<LinkState>, NetStateError> {
        let mut ids = edges.to_vec();
        ids.sort();
        ids.into_iter().map(|id| self.link_state(id)).collect()
    }

    /// `(t, edge, utilization)` for every edge at the current step.
    pub fn utilization_records(&self) -> impl Iterator<Item = (u64, EdgeId, f64)> + '_ {
        let t = self.clock.t;
        self.edge_ids.iter().zip(&self.utilization).map(move |(&e, &u)| (t, e, u))
    }

    pub fn total_active(&self) -> u64 {
        self.active.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairWeight {
    /// Node name or decimal id.
    pub source: String,
    pub destination: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Traffic profile: weighted source-destination pairs, an inclusive integer
/// duration range in steps, and the number of requests arriving per step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficProfile {
    pub pairs: Vec<PairWeight>,
    pub duration_min: u64,
    pub duration_max: u64,
    pub requests_per_step: u32,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        Self { pairs: Vec::new(), duration_min: 6, duration_max: 10, requests_per_step: 10 }
    }
}

/// Seeded request source built from a [`TrafficProfile`].
#[derive(Clone, Debug)]
pub struct TrafficGenerator {
    pairs: Vec<(NodeId, NodeId)>,
    cumulative: Vec<f64>,
    duration_min: u64,
    duration_max: u64,
    next_id: u64,
}

impl TrafficGenerator {
    pub fn new(net: &Network, profile: &TrafficProfile) -> Result<Self, NetStateError> {
        if profile.duration_min == 0 || profile.duration_min > profile.duration_max {
            return Err(NetStateError::BadDurations(profile.duration_min, profile.duration_max));
        }
        if profile.requests_per_step == 0 {
            return Err(NetStateError::NoRequests);
        }
        let mut pairs = Vec::new();
        let mut cumulative = Vec::new();
        let mut total = 0.0;
        for p in &profile.pairs {
            if !(p.weight.is_finite() && p.weight > 0.0) {
                continue;
            }
            pairs.push((net.node_by_name(&p.source)?, net.node_by_name(&p.destination)?));
            total += p.weight;
            cumulative.push(total);
        }
        if pairs.is_empty() {
            return Err(NetStateError::EmptyPairs);
        }
        Ok(TrafficGenerator {
            pairs,
            cumulative,
            duration_min: profile.duration_min,
            duration_max: profile.duration_max,
            next_id: 0,
        })
    }

    /// Draws the next request: a weighted pair and a uniform integer duration.
    pub fn generate_request<R: Rng + ?Sized>(&mut self, rng: &mut R) -> FlowRequest {
        let pair = if self.pairs.len() == 1 {
            0
        } else {
            let total = *self.cumulative.last().expect("non-empty");
            let x = rng.random::<f64>() * total;
            self.cumulative.partition_point(|&c| c <= x).min(self.pairs.len() - 1)
        };
        let duration = rng.random_range(self.duration_min..=self.duration_max);
        let (source, destination) = self.pairs[pair];
        let id = self.next_id;
        self.next_id += 1;
        FlowRequest { id, source, destination, duration }
    }
}
