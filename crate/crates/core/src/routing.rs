//! Recursive hierarchical path assembly.
//!
//! A request between two nodes scans levels from the top down. At the first
//! level where the group vectors differ, the leader of the enclosing group
//! picks one of the links joining the two sibling groups, and the segments on
//! either side of that link are routed recursively one level lower. Nodes in
//! the same level-1 group are joined by a hop-count shortest path.

use serde::Serialize;
use thiserror::Error;

use crate::topology::{Edge, EdgeId, GroupId, GroupVector, Level, Network, NodeId, QosFilter, TopologyError};

#[derive(Debug, Error)]
pub enum RouteError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("no link from {from} to {to} at level {level} satisfies the QoS filter")]
    NoCandidates { from: GroupId, to: GroupId, level: Level },
    #[error("no path from {from} to {to} inside their level-1 group")]
    NoIntraGroupPath { from: NodeId, to: NodeId },
    #[error("{group} has no leader above level {level}")]
    NoLeader { group: GroupId, level: Level },
    #[error("chooser returned index {index} for {candidates} candidates")]
    BadChoice { index: usize, candidates: usize },
    #[error("link choice failed: {0}")]
    Chooser(String),
    #[error("satisfaction signal {0} outside [0, 1]")]
    BadSignal(f64),
    #[error("feedback delivery failed: {0}")]
    Delivery(String),
}

/// Everything a leader is told when asked to pick a link.
#[derive(Debug)]
pub struct LinkRequest<'a> {
    pub request: u64,
    /// Group whose leader decides (one level above `level`).
    pub leader_group: GroupId,
    pub leader: NodeId,
    pub level: Level,
    pub from_vector: &'a GroupVector,
    pub to_vector: &'a GroupVector,
    /// Ascending edge id.
    pub candidates: &'a [&'a Edge],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Choice {
    pub index: usize,
    /// The deciding leader's timestamp for this decision.
    pub stamp: u64,
}

/// The link-choice procedure consulted at every divergence level.
pub trait LinkChooser {
    fn choose_link(&mut self, request: &LinkRequest<'_>) -> Result<Choice, RouteError>;
}

impl<F> LinkChooser for F
where
    F: FnMut(&LinkRequest<'_>) -> Result<Choice, RouteError>,
{
    fn choose_link(&mut self, request: &LinkRequest<'_>) -> Result<Choice, RouteError> {
        self(request)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LeaderDecision {
    pub leader_group: GroupId,
    pub leader: NodeId,
    pub level: Level,
    pub edge: EdgeId,
    pub stamp: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Path {
    pub request: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub edges: Vec<EdgeId>,
    /// In the order the choices were made.
    pub decisions: Vec<LeaderDecision>,
}

/// The level at which the route-request loop acts: the highest `h <= bound`
/// with differing entries.
pub fn divergence_scan(a: &GroupVector, b: &GroupVector, bound: Level) -> Option<Level> {
    (1..=bound.min(a.depth())).rev().find(|&h| a.at(h) != b.at(h))
}

/// Computes a path from `source` to `destination`. Nothing is committed on
/// failure; the caller decides what to do with any decisions already made.
pub fn route_request<C: LinkChooser + ?Sized>(
    net: &Network,
    chooser: &mut C,
    request: u64,
    source: NodeId,
    destination: NodeId,
    qos: &QosFilter,
) -> Result<Path, RouteError> {
    let mut path = Path { request, source, destination, edges: Vec::new(), decisions: Vec::new() };
    let mut ctx = Ctx { net, chooser, qos, request };
    ctx.segment(source, destination, net.depth(), &mut path)?;
    Ok(path)
}

struct Ctx<'a, C: ?Sized> {
    net: &'a Network,
    chooser: &'a mut C,
    qos: &'a QosFilter,
    request: u64,
}

impl<C: LinkChooser + ?Sized> Ctx<'_, C> {
    fn segment(&mut self, v1: NodeId, v2: NodeId, bound: Level, path: &mut Path) -> Result<(), RouteError> {
        let g1 = self.net.group_vector(v1)?;
        let g2 = self.net.group_vector(v2)?;
        let Some(h) = divergence_scan(g1, g2, bound) else {
            let intra = self.net.intra_group_path(v1, v2).ok_or(RouteError::NoIntraGroupPath { from: v1, to: v2 })?;
            path.edges.extend(intra);
            return Ok(());
        };

        let leader_group = g1.at(h + 1);
        let leader = self.net.leader(leader_group).ok_or(RouteError::NoLeader { group: g1.at(h), level: h })?;
        let candidates = self.net.find_links(g1.at(h), g2.at(h), h, self.qos)?;
        if candidates.is_empty() {
            return Err(RouteError::NoCandidates { from: g1.at(h), to: g2.at(h), level: h });
        }
        let choice = self.chooser.choose_link(&LinkRequest {
            request: self.request,
            leader_group,
            leader,
            level: h,
            from_vector: g1,
            to_vector: g2,
            candidates: &candidates,
        })?;
        let edge = *candidates
            .get(choice.index)
            .ok_or(RouteError::BadChoice { index: choice.index, candidates: candidates.len() })?;
        path.decisions.push(LeaderDecision { leader_group, leader, level: h, edge: edge.id, stamp: choice.stamp });

        let (u1, u2, id) = (edge.from, edge.to, edge.id);
        self.segment(v1, u1, h - 1, path)?;
        path.edges.push(id);
        self.segment(u2, v2, h - 1, path)
    }
}

/// The source's satisfaction report for one routed request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeedbackSignal {
    pub request: u64,
    pub y: f64,
    pub issued_at: u64,
}

/// Receives feedback on behalf of the leaders.
pub trait FeedbackSink {
    fn deliver(&mut self, leader_group: GroupId, stamp: u64, signal: &FeedbackSignal) -> Result<(), RouteError>;
}

/// Sends the same `y` to every leader that chose a link for `path`.
pub fn dispatch_feedback<S: FeedbackSink + ?Sized>(
    path: &Path,
    y: f64,
    issued_at: u64,
    sink: &mut S,
) -> Result<FeedbackSignal, RouteError> {
    if !(0.0..=1.0).contains(&y) {
        return Err(RouteError::BadSignal(y));
    }
    let signal = FeedbackSignal { request: path.request, y, issued_at };
    for d in &path.decisions {
        sink.deliver(d.leader_group, d.stamp, &signal)?;
    }
    Ok(signal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{first_divergence, parse_network};

    const THREE_LINK: &str = include_str!("../../../topologies/three_link.toml");

    fn first_choice(stamp: &mut u64) -> impl FnMut(&LinkRequest<'_>) -> Result<Choice, RouteError> + '_ {
        move |_req| {
            *stamp += 1;
            Ok(Choice { index: 0, stamp: *stamp })
        }
    }

    fn check_connected(net: &Network, path: &Path) {
        let mut at = path.source;
        for &e in &path.edges {
            let edge = net.edge(e).unwrap();
            assert_eq!(edge.from, at);
            at = edge.to;
        }
        assert_eq!(at, path.destination);
    }

    #[test]
    fn end_to_end_pair_has_three_paths() {
        let net = parse_network(THREE_LINK).unwrap();
        let u1 = net.node_by_name("u1").unwrap();
        let u16 = net.node_by_name("u16").unwrap();
        let mut paths = Vec::new();
        for pick in 0..3 {
            let mut chooser = |req: &LinkRequest<'_>| {
                assert_eq!(req.leader_group, GroupId(40));
                assert_eq!(req.level, 2);
                assert_eq!(req.candidates.len(), 3);
                Ok(Choice { index: pick, stamp: 0 })
            };
            let p = route_request(&net, &mut chooser, 0, u1, u16, &QosFilter::accept_all()).unwrap();
            check_connected(&net, &p);
            assert_eq!(p.decisions.len(), 1);
            assert_eq!(p.decisions[0].edge, EdgeId(pick as u32 + 1));
            paths.push(p.edges);
        }
        paths.dedup();
        assert_eq!(paths.len(), 3);
    }

    #[test]
    fn same_node_is_empty_path() {
        let net = parse_network(THREE_LINK).unwrap();
        let mut stamp = 0;
        let u3 = net.node_by_name("u3").unwrap();
        let p = route_request(&net, &mut first_choice(&mut stamp), 0, u3, u3, &QosFilter::accept_all()).unwrap();
        assert!(p.edges.is_empty() && p.decisions.is_empty());
    }

    #[test]
    fn multi_leader_route() {
        // u5 (group 21) to u9 (group 22): leader 40 picks a 30 -> 31 link,
        // leader 30 joins 21 to 20, leader 31 joins the link head to 22.
        let net = parse_network(THREE_LINK).unwrap();
        let mut stamp = 0;
        let (u5, u9) = (net.node_by_name("u5").unwrap(), net.node_by_name("u9").unwrap());
        let p = route_request(&net, &mut first_choice(&mut stamp), 7, u5, u9, &QosFilter::accept_all()).unwrap();
        check_connected(&net, &p);
        let leaders: Vec<u32> = p.decisions.iter().map(|d| d.leader_group.0).collect();
        assert_eq!(leaders, vec![40, 30, 31]);
        let levels: Vec<usize> = p.decisions.iter().map(|d| d.level).collect();
        assert_eq!(levels, vec![2, 1, 1]);
    }

    #[test]
    fn empty_candidates_fail_the_request() {
        let net = parse_network(THREE_LINK).unwrap();
        let mut stamp = 0;
        let strict = QosFilter { min_capacity: Some(1000.0), ..Default::default() };
        let (u1, u16) = (net.node_by_name("u1").unwrap(), net.node_by_name("u16").unwrap());
        let err = route_request(&net, &mut first_choice(&mut stamp), 0, u1, u16, &strict).unwrap_err();
        assert!(matches!(err, RouteError::NoCandidates { level: 2, .. }));
        // Reverse direction has no 31 -> 30 link at all.
        assert!(route_request(&net, &mut first_choice(&mut stamp), 0, u16, u1, &QosFilter::accept_all()).is_err());
    }

    #[test]
    fn bad_choice_index() {
        let net = parse_network(THREE_LINK).unwrap();
        let (u1, u16) = (net.node_by_name("u1").unwrap(), net.node_by_name("u16").unwrap());
        let mut chooser = |_: &LinkRequest<'_>| Ok(Choice { index: 9, stamp: 0 });
        assert!(matches!(
            route_request(&net, &mut chooser, 0, u1, u16, &QosFilter::accept_all()),
            Err(RouteError::BadChoice { index: 9, candidates: 3 })
        ));
    }

    #[test]
    fn scan_agrees_with_first_divergence() {
        let net = parse_network(THREE_LINK).unwrap();
        let nodes: Vec<NodeId> = net.nodes().collect();
        for &a in &nodes {
            for &b in &nodes {
                let (ga, gb) = (net.group_vector(a).unwrap(), net.group_vector(b).unwrap());
                assert_eq!(divergence_scan(ga, gb, net.depth()), first_divergence(ga, gb).unwrap());
            }
        }
    }

    struct Recorder(Vec<(GroupId, u64, f64)>);

    impl FeedbackSink for Recorder {
        fn deliver(&mut self, g: GroupId, stamp: u64, s: &FeedbackSignal) -> Result<(), RouteError> {
            self.0.push((g, stamp, s.y));
            Ok(())
        }
    }

    #[test]
    fn feedback_reaches_every_leader_equally() {
        let net = parse_network(THREE_LINK).unwrap();
        let mut stamp = 0;
        let (u5, u9) = (net.node_by_name("u5").unwrap(), net.node_by_name("u9").unwrap());
        let p = route_request(&net, &mut first_choice(&mut stamp), 1, u5, u9, &QosFilter::accept_all()).unwrap();
        let mut sink = Recorder(Vec::new());
        dispatch_feedback(&p, 0.5, 10, &mut sink).unwrap();
        assert_eq!(sink.0.len(), 3);
        assert!(sink.0.iter().all(|(_, _, y)| *y == 0.5));
        let stamps: Vec<u64> = sink.0.iter().map(|x| x.1).collect();
        assert_eq!(stamps, vec![1, 2, 3]);
        assert!(matches!(dispatch_feedback(&p, 1.5, 10, &mut sink), Err(RouteError::BadSignal(_))));
    }
}
