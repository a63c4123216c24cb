use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::metrics::{metrics_header, MetricsRecord, TransitionRecord};
use super::HarnessError;
use crate::agent::{
    encode_state, global_reward, local_reward, Agent, Algorithm, Committed, LinkObservation, Observation, StateLayout,
};
use crate::netstate::{FlowRequest, NetState, TrafficGenerator};
use crate::routing::{
    dispatch_feedback, route_request, Choice, FeedbackSignal, FeedbackSink, LinkRequest, Path as RoutePath, RouteError,
};
use crate::topology::{load_network, EdgeId, GroupId, Network};

const TRAFFIC_STREAM: u64 = 1;
const EXPLORE_STREAM: u64 = 2;
const REPLAY_STREAM: u64 = 3;
const INIT_STREAM: u64 = 4;

/// Independent generator for `(kind, index)` derived from the master seed.
fn stream(seed: u64, kind: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 32) | index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentManifest {
    pub group: u32,
    pub level: usize,
    pub leader: u32,
    pub input_width: usize,
    pub outputs: usize,
    pub group_entries: usize,
    pub decisions: u64,
    pub learn_steps: u64,
    pub target_syncs: u64,
    pub stored: u64,
    pub fallbacks: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub routed: u64,
    pub routing_failures: u64,
    pub learn_steps: u64,
    pub committed: u64,
    pub discounted_return: f64,
    pub trace_hash: String,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub rng_streams: BTreeMap<String, u64>,
    pub summary: RunSummary,
    pub agents: Vec<AgentManifest>,
    pub config: RunConfig,
}

/// Routes feedback to the leader agents.
struct Leaders<'a>(&'a mut BTreeMap<GroupId, Agent>);

impl FeedbackSink for Leaders<'_> {
    fn deliver(&mut self, leader_group: GroupId, stamp: u64, signal: &FeedbackSignal) -> Result<(), RouteError> {
        let agent = self
            .0
            .get_mut(&leader_group)
            .ok_or_else(|| RouteError::Delivery(format!("no agent for {leader_group}")))?;
        agent.receive_signal(stamp, signal.y).map_err(|e| RouteError::Delivery(e.to_string()))
    }
}

/// Source satisfaction with a path: the least preferred edge on it.
fn satisfaction(config: &RunConfig, edges: &[EdgeId]) -> f64 {
    let f = &config.feedback;
    edges
        .iter()
        .map(|e| f.preferences.get(&e.0.to_string()).copied().unwrap_or(f.default_satisfaction))
        .fold(f.default_satisfaction, f64::min)
}

fn trace_update(hasher: &mut Sha256, req: &FlowRequest) {
    for v in [req.id, req.source.0 as u64, req.destination.0 as u64, req.duration] {
        hasher.update(v.to_le_bytes());
    }
}

struct TopDecision {
    leader: GroupId,
    action: usize,
    edge: EdgeId,
    explored: bool,
    epsilon: f64,
    beta: f64,
    utilization: Vec<f64>,
    loss: Option<(f64, f64)>,
    local_reward: f64,
}

fn build_agents(config: &RunConfig, net: &Network) -> Result<BTreeMap<GroupId, Agent>, HarnessError> {
    let agent_config = config.agent_config();
    let mut agents = BTreeMap::new();
    let groups: Vec<_> = net.hierarchy().groups().filter(|g| g.level >= 2).collect();
    for (index, g) in groups.iter().enumerate() {
        let index = index as u64;
        let layout = StateLayout::new(
            g.level - 1,
            config.learning.k,
            config.learning.max_candidates,
            net.hierarchy().max_group_id(),
        );
        let agent = Agent::new(
            agent_config.clone(),
            layout,
            config.learning.memory_size,
            &mut stream(config.seed, INIT_STREAM, index),
            stream(config.seed, EXPLORE_STREAM, index),
            stream(config.seed, REPLAY_STREAM, index),
        )?;
        agents.insert(g.id, agent);
    }
    Ok(agents)
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Metrics { path: path.display().to_string(), message: e.to_string() }
}

/// Runs one experiment and writes `manifest.toml`, `metrics.csv`,
/// `transitions.csv` and `routes.csv` into `out`.
pub fn run_experiment(config: &RunConfig, out: &Path) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let net = load_network(&config.topology)?;
    let mut traffic =
        TrafficGenerator::new(&net, &config.traffic).map_err(|e| HarnessError::Config(format!("traffic: {e}")))?;
    let mut agents = build_agents(config, &net)?;
    create_dir(out)?;

    let metrics_path = out.join("metrics.csv");
    let transitions_path = out.join("transitions.csv");
    let routes_path = out.join("routes.csv");
    let mut metrics = csv_writer(&metrics_path)?;
    let mut transitions = csv_writer(&transitions_path)?;
    let mut routes = csv_writer(&routes_path)?;
    let slots = config.learning.max_candidates;
    metrics.write_record(metrics_header(slots)).map_err(csv_err(&metrics_path))?;
    routes
        .write_record(["step", "request", "source", "destination", "duration", "status", "edges", "leaders"])
        .map_err(csv_err(&routes_path))?;

    let mut state = NetState::new(&net);
    let mut traffic_rng = stream(config.seed, TRAFFIC_STREAM, 0);
    let mut hasher = Sha256::new();
    let rewards = config.rewards;
    let gamma = config.learning.gamma;
    let mut discount = 1.0;
    let mut summary = RunSummary {
        steps: config.horizon,
        routed: 0,
        routing_failures: 0,
        learn_steps: 0,
        committed: 0,
        discounted_return: 0.0,
        trace_hash: String::new(),
    };

    for step in 0..config.horizon {
        if step > 0 && step % config.traffic.requests_per_step as u64 == 0 {
            state.advance();
        }
        let request = traffic.generate_request(&mut traffic_rng);
        trace_update(&mut hasher, &request);

        let mut top: Option<TopDecision> = None;
        let mut committed: Vec<(GroupId, Committed)> = Vec::new();
        let mut fatal: Option<HarnessError> = None;
        let routed = {
            let agents = &mut agents;
            let state = &state;
            let mut chooser = |req: &LinkRequest<'_>| -> Result<Choice, RouteError> {
                let result = choose(config, state, agents, req);
                match result {
                    Ok((choice, decision, done)) => {
                        committed.extend(done.into_iter().map(|c| (req.leader_group, c)));
                        if top.is_none() {
                            top = Some(decision);
                        }
                        Ok(choice)
                    }
                    Err(e) => {
                        let msg = e.to_string();
                        fatal = Some(e);
                        Err(RouteError::Chooser(msg))
                    }
                }
            };
            route_request(&net, &mut chooser, request.id, request.source, request.destination, &config.qos)
        };
        if let Some(e) = fatal {
            return Err(e);
        }

        let mut signal = None;
        let leaders: String;
        let status;
        let edges: String;
        match routed {
            Ok(path) => {
                let y = satisfaction(config, &path.edges);
                dispatch_feedback(&path, y, step, &mut Leaders(&mut agents))
                    .map_err(|e| HarnessError::Config(format!("feedback: {e}")))?;
                state.admit_flow(&net, &request, path.edges.clone())?;
                signal = Some(y);
                summary.routed += 1;
                status = "ok";
                edges = join(path.edges.iter().map(|e| e.0));
                leaders = join_leaders(&path);
            }
            Err(e) => {
                log::debug!("request {} not routed: {e}", request.id);
                summary.routing_failures += 1;
                status = "failed";
                edges = String::new();
                leaders = String::new();
            }
        }
        routes
            .write_record([
                step.to_string(),
                request.id.to_string(),
                request.source.0.to_string(),
                request.destination.0.to_string(),
                request.duration.to_string(),
                status.to_string(),
                edges,
                leaders,
            ])
            .map_err(csv_err(&routes_path))?;

        for (leader, c) in &committed {
            summary.committed += 1;
            let rec = TransitionRecord {
                leader: leader.0,
                decision_step: c.stamp,
                commit_step: c.committed_at,
                action: c.action,
                signal: c.signal,
                local_reward: c.local_reward,
                reward: c.reward,
            };
            transitions.serialize(rec).map_err(csv_err(&transitions_path))?;
        }

        let mut rec = MetricsRecord {
            step,
            tick: state.clock().t,
            routed: signal.is_some(),
            utilization: vec![None; slots],
            discounted_return: summary.discounted_return,
            ..MetricsRecord::default()
        };
        if let Some(d) = &top {
            let agent = &agents[&d.leader];
            rec.warmup = !agent.learning_started();
            rec.leader = Some(d.leader.0);
            rec.action = Some(d.action);
            rec.edge = Some(d.edge.0);
            rec.explored = Some(d.explored);
            rec.epsilon = Some(d.epsilon);
            rec.beta = Some(d.beta);
            for (slot, u) in rec.utilization.iter_mut().zip(&d.utilization) {
                *slot = Some(*u);
            }
            if let Some((loss, td)) = d.loss {
                summary.learn_steps += 1;
                rec.loss = Some(loss);
                rec.mean_abs_td = Some(td);
            }
            rec.local_reward = Some(d.local_reward);
            if let Some(y) = signal {
                let r = global_reward(&rewards, y)? + d.local_reward;
                rec.signal = Some(y);
                rec.reward = Some(r);
                summary.discounted_return += discount * r;
                rec.discounted_return = summary.discounted_return;
            }
        }
        discount *= gamma;
        metrics.write_record(rec.to_row()).map_err(csv_err(&metrics_path))?;
    }

    for (w, p) in [(&mut metrics, &metrics_path), (&mut transitions, &transitions_path), (&mut routes, &routes_path)] {
        w.flush().map_err(|e| HarnessError::io(p, e))?;
    }
    summary.trace_hash = hex::encode(hasher.finalize());

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        algorithm: config.algorithm,
        rng_streams: BTreeMap::from([
            ("traffic".into(), TRAFFIC_STREAM),
            ("exploration".into(), EXPLORE_STREAM),
            ("replay".into(), REPLAY_STREAM),
            ("init".into(), INIT_STREAM),
        ]),
        summary: summary.clone(),
        agents: agents
            .iter()
            .map(|(g, a)| {
                let group = net.hierarchy().group(*g).expect("agent group exists");
                let c = a.counters();
                AgentManifest {
                    group: g.0,
                    level: group.level,
                    leader: group.leader.0,
                    input_width: a.layout().width(),
                    outputs: a.layout().max_candidates,
                    group_entries: a.layout().group_entries,
                    decisions: c.decisions,
                    learn_steps: c.learn_steps,
                    target_syncs: c.target_syncs,
                    stored: c.stored,
                    fallbacks: a.pending().fallbacks(),
                }
            })
            .collect(),
        config: config.clone(),
    };
    let manifest_path = out.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| HarnessError::Config(e.to_string()))?;
    fs::write(&manifest_path, text).map_err(|e| HarnessError::io(&manifest_path, e))?;
    log::info!(
        "seed {} {:?}: {} steps, {} learn steps, discounted return {}",
        config.seed,
        config.algorithm,
        summary.steps,
        summary.learn_steps,
        summary.discounted_return
    );
    Ok(summary)
}

fn join(ids: impl Iterator<Item = u32>) -> String {
    ids.map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

fn join_leaders(path: &RoutePath) -> String {
    join(path.decisions.iter().map(|d| d.leader_group.0))
}

/// One leader decision: observe, decide, remember what the metrics need.
fn choose(
    config: &RunConfig,
    state: &NetState,
    agents: &mut BTreeMap<GroupId, Agent>,
    req: &LinkRequest<'_>,
) -> Result<(Choice, TopDecision, Vec<Committed>), HarnessError> {
    let agent = agents
        .get_mut(&req.leader_group)
        .ok_or_else(|| HarnessError::Config(format!("no agent for {}", req.leader_group)))?;
    let ids: Vec<EdgeId> = req.candidates.iter().map(|e| e.id).collect();
    let links = state.snapshot_links(&ids)?;
    let queuing_delay = config.queue.queuing_delay(agent.pending().len());
    let k = config.learning.k;
    let entries = |v: &crate::topology::GroupVector| {
        if k > req.level {
            Vec::new()
        } else {
            v.slice(k, req.level).to_vec()
        }
    };
    let obs = Observation {
        from_groups: entries(req.from_vector),
        to_groups: entries(req.to_vector),
        queuing_delay,
        links: links
            .iter()
            .map(|l| LinkObservation { utilization: l.utilization, delay: l.transmission_delay })
            .collect(),
    };
    let encoded = encode_state(&obs, agent.layout())?;
    let rewards = config.rewards;
    let decision = agent.decide(encoded, links.len(), |a| local_reward(&rewards, a, &links, queuing_delay))?;
    let top = TopDecision {
        leader: req.leader_group,
        action: decision.action,
        edge: ids[decision.action],
        explored: decision.explored,
        epsilon: decision.epsilon,
        beta: decision.beta,
        utilization: links.iter().map(|l| l.utilization).collect(),
        loss: decision.learned.map(|d| (d.loss, d.mean_abs_td)),
        local_reward: decision.local_reward,
    };
    Ok((Choice { index: decision.action, stamp: decision.stamp }, top, decision.committed))
}

/// Paired DDQN and DQN totals for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub ddqn: f64,
    pub dqn: f64,
    /// Sign of `ddqn - dqn`: 1, 0 or -1.
    pub sign: i8,
    pub trace_hash: String,
}

/// Runs both algorithms for every seed (seeds in parallel) on identical
/// traffic and writes `comparison.csv` into `out`.
pub fn compare_algorithms(config: &RunConfig, seeds: &[u64], out: &Path) -> Result<Vec<ComparisonRow>, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::NoSeeds);
    }
    config.validate()?;
    create_dir(out)?;
    let run_dir = |seed: u64, algo: Algorithm| -> PathBuf {
        let name = match algo {
            Algorithm::Ddqn => "ddqn",
            Algorithm::Dqn => "dqn",
        };
        out.join(format!("seed-{seed}-{name}"))
    };
    let results: Vec<Result<ComparisonRow, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let mut totals = Vec::new();
                    for algo in [Algorithm::Ddqn, Algorithm::Dqn] {
                        let mut c = config.clone();
                        c.seed = seed;
                        c.algorithm = algo;
                        totals.push(run_experiment(&c, &run_dir(seed, algo))?);
                    }
                    let (d, q) = (&totals[0], &totals[1]);
                    if d.trace_hash != q.trace_hash {
                        return Err(HarnessError::TraceMismatch { seed });
                    }
                    let diff = d.discounted_return - q.discounted_return;
                    Ok(ComparisonRow {
                        seed,
                        ddqn: d.discounted_return,
                        dqn: q.discounted_return,
                        sign: if diff > 0.0 {
                            1
                        } else if diff < 0.0 {
                            -1
                        } else {
                            0
                        },
                        trace_hash: d.trace_hash.clone(),
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed run panicked")).collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let path = out.join("comparison.csv");
    let mut w = csv_writer(&path)?;
    for row in &rows {
        w.serialize(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    Ok(rows)
}
