//! Static network description: directed graph, capacities, the cluster
//! hierarchy with its leaders, and candidate-link discovery between sibling
//! groups.
//!
//! Levels are 1-based throughout: level 1 is the lowest group a node belongs
//! to, level `depth` holds the single root group.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deepest hierarchy accepted by the loader. Bounds the routing recursion.
pub const MAX_DEPTH: usize = 8;

/// Hierarchy level, 1-based.
pub type Level = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}", self.0)
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "group {}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "edge {}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("cannot read topology document: {0}")]
    Io(String),
    #[error("malformed topology document: {0}")]
    Parse(String),
    #[error("hierarchy depth {0} outside 1..={MAX_DEPTH}")]
    BadDepth(usize),
    #[error("{0} declared twice")]
    DuplicateNode(NodeId),
    #[error("{0} declared twice")]
    DuplicateEdge(EdgeId),
    #[error("{0} declared twice")]
    DuplicateGroup(GroupId),
    #[error("{edge} references unknown {node}")]
    DanglingNode { edge: EdgeId, node: NodeId },
    #[error("{0} has identical endpoints")]
    SelfLoop(EdgeId),
    #[error("{0} has non-positive or non-finite capacity")]
    BadCapacity(EdgeId),
    #[error("{0} has negative or non-finite delay")]
    BadDelay(EdgeId),
    #[error("{0} has loss probability outside [0, 1]")]
    BadLoss(EdgeId),
    #[error("{group} has level {level} outside 1..={depth}")]
    BadLevel { group: GroupId, level: Level, depth: usize },
    #[error("{0} has no members")]
    EmptyGroup(GroupId),
    #[error("{group} lists unknown member {member} at level {level}")]
    UnknownMember { group: GroupId, member: u32, level: Level },
    #[error("{0} is not assigned to any level-1 group")]
    UnassignedNode(NodeId),
    #[error("{node} is assigned to both {first} and {second}")]
    NodeInTwoGroups { node: NodeId, first: GroupId, second: GroupId },
    #[error("{0} has no parent group")]
    OrphanGroup(GroupId),
    #[error("{child} has two parents, {first} and {second}")]
    GroupInTwoParents { child: GroupId, first: GroupId, second: GroupId },
    #[error("expected exactly one root group at level {depth}, found {found}")]
    RootCount { depth: usize, found: usize },
    #[error("{0} has no leader")]
    LeaderlessGroup(GroupId),
    #[error("leader {leader} of {group} is not a member of that group")]
    LeaderOutsideGroup { group: GroupId, leader: NodeId },
    #[error("child groups of {0} are not connected to each other")]
    DisconnectedSiblings(GroupId),
    #[error("unknown {0}")]
    UnknownNode(NodeId),
    #[error("unknown node name {0:?}")]
    UnknownNodeName(String),
    #[error("unknown {0}")]
    UnknownEdge(EdgeId),
    #[error("unknown {group} at level {level}")]
    UnknownGroup { group: GroupId, level: Level },
    #[error("group vectors have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("{0} and {1} are not distinct sibling groups at level {2}")]
    NotSiblings(GroupId, GroupId, Level),
}

/// Cluster identity of a node, lowest level first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupVector(Vec<GroupId>);

impl GroupVector {
    pub fn new(levels: Vec<GroupId>) -> Self {
        GroupVector(levels)
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Group at `level` (1-based). Panics when the level is out of range.
    pub fn at(&self, level: Level) -> GroupId {
        self.0[level - 1]
    }

    pub fn levels(&self) -> &[GroupId] {
        &self.0
    }

    /// Entries `from..=to` (1-based, inclusive); empty when `from > to`.
    pub fn slice(&self, from: Level, to: Level) -> &[GroupId] {
        if from > to || from == 0 {
            return &[];
        }
        &self.0[from - 1..to.min(self.0.len())]
    }
}

/// Highest level at which the two vectors differ, `None` when identical.
pub fn first_divergence(a: &GroupVector, b: &GroupVector) -> Result<Option<Level>, TopologyError> {
    if a.depth() != b.depth() {
        return Err(TopologyError::LengthMismatch(a.depth(), b.depth()));
    }
    Ok((1..=a.depth()).rev().find(|&h| a.at(h) != b.at(h)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub from: NodeId,
    pub to: NodeId,
    /// Flows per time unit.
    pub capacity: f64,
    #[serde(default)]
    pub delay: f64,
    #[serde(default)]
    pub loss: f64,
}

/// Conjunctive predicate over static edge attributes. The default accepts
/// every edge.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_delay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_loss: Option<f64>,
}

impl QosFilter {
    pub fn accept_all() -> Self {
        Self::default()
    }

    pub fn accepts(&self, edge: &Edge) -> bool {
        self.min_capacity.is_none_or(|c| edge.capacity >= c)
            && self.max_delay.is_none_or(|d| edge.delay <= d)
            && self.max_loss.is_none_or(|p| edge.loss <= p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub id: GroupId,
    pub level: Level,
    /// Node ids at level 1, child group ids above.
    pub members: Vec<u32>,
    pub leader: NodeId,
    pub parent: Option<GroupId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    depth: usize,
    groups: BTreeMap<GroupId, Group>,
}

impl Hierarchy {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn group(&self, id: GroupId) -> Option<&Group> {
        self.groups.get(&id)
    }

    pub fn groups(&self) -> impl Iterator<Item = &Group> {
        self.groups.values()
    }

    pub fn groups_at(&self, level: Level) -> impl Iterator<Item = &Group> {
        self.groups.values().filter(move |g| g.level == level)
    }

    pub fn leader(&self, id: GroupId) -> Option<NodeId> {
        self.groups.get(&id).map(|g| g.leader)
    }

    pub fn max_group_id(&self) -> u32 {
        self.groups.keys().map(|g| g.0).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct NodeInfo {
    name: Option<String>,
    vector: GroupVector,
}

/// Validated, immutable network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    nodes: BTreeMap<NodeId, NodeInfo>,
    /// Sorted by edge id.
    edges: Vec<Edge>,
    edge_index: HashMap<EdgeId, usize>,
    /// Outgoing edge positions per node, ascending edge id.
    out_edges: HashMap<NodeId, Vec<usize>>,
    /// (group at e[1], group at e[2]) -> edge positions, for every level the
    /// edge crosses.
    crossings: HashMap<(GroupId, GroupId), Vec<usize>>,
    hierarchy: Hierarchy,
}

impl Network {
    pub fn depth(&self) -> usize {
        self.hierarchy.depth
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains_key(&node)
    }

    pub fn node_name(&self, node: NodeId) -> Option<&str> {
        self.nodes.get(&node).and_then(|n| n.name.as_deref())
    }

    /// Resolves either a declared node name or a decimal node id.
    pub fn node_by_name(&self, name: &str) -> Result<NodeId, TopologyError> {
        if let Some((id, _)) = self.nodes.iter().find(|(_, n)| n.name.as_deref() == Some(name)) {
            return Ok(*id);
        }
        name.parse::<u32>()
            .ok()
            .map(NodeId)
            .filter(|id| self.nodes.contains_key(id))
            .ok_or_else(|| TopologyError::UnknownNodeName(name.to_string()))
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Result<&Edge, TopologyError> {
        self.edge_index.get(&id).map(|&i| &self.edges[i]).ok_or(TopologyError::UnknownEdge(id))
    }

    /// Position of the edge in `edges()`, used as a dense index by the
    /// dynamic state.
    pub fn edge_position(&self, id: EdgeId) -> Option<usize> {
        self.edge_index.get(&id).copied()
    }

    pub fn group_vector(&self, node: NodeId) -> Result<&GroupVector, TopologyError> {
        self.nodes.get(&node).map(|n| &n.vector).ok_or(TopologyError::UnknownNode(node))
    }

    /// Leader node of a group.
    pub fn leader(&self, group: GroupId) -> Option<NodeId> {
        self.hierarchy.leader(group)
    }

    /// Candidate links from sibling group `from` to sibling group `to` at
    /// `level`, filtered by `qos`, ascending edge id. An empty result is not
    /// an error.
    pub fn find_links(
        &self,
        from: GroupId,
        to: GroupId,
        level: Level,
        qos: &QosFilter,
    ) -> Result<Vec<&Edge>, TopologyError> {
        let ga = self.group_at_level(from, level)?;
        let gb = self.group_at_level(to, level)?;
        if ga.id == gb.id || ga.parent != gb.parent || ga.parent.is_none() {
            return Err(TopologyError::NotSiblings(from, to, level));
        }
        Ok(self
            .crossings
            .get(&(from, to))
            .map(|idx| idx.iter().map(|&i| &self.edges[i]).filter(|e| qos.accepts(e)).collect())
            .unwrap_or_default())
    }

    fn group_at_level(&self, id: GroupId, level: Level) -> Result<&Group, TopologyError> {
        self.hierarchy.group(id).filter(|g| g.level == level).ok_or(TopologyError::UnknownGroup { group: id, level })
    }

    /// Hop-count shortest path from `from` to `to` using only edges inside
    /// their shared level-1 group. Ties go to the lower edge id. `None` when
    /// the nodes are in different level-1 groups or no such path exists.
    pub fn intra_group_path(&self, from: NodeId, to: NodeId) -> Option<Vec<EdgeId>> {
        let group = self.nodes.get(&from)?.vector.at(1);
        if self.nodes.get(&to)?.vector.at(1) != group {
            return None;
        }
        if from == to {
            return Some(Vec::new());
        }
        let mut via: HashMap<NodeId, usize> = HashMap::new();
        let mut queue = VecDeque::from([from]);
        while let Some(u) = queue.pop_front() {
            for &i in self.out_edges.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                let e = &self.edges[i];
                if e.to == from || via.contains_key(&e.to) || self.nodes[&e.to].vector.at(1) != group {
                    continue;
                }
                via.insert(e.to, i);
                if e.to == to {
                    let mut path = Vec::new();
                    let mut cur = to;
                    while cur != from {
                        let e = &self.edges[via[&cur]];
                        path.push(e.id);
                        cur = e.from;
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(e.to);
            }
        }
        None
    }
}

/// On-disk topology document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    pub depth: usize,
    #[serde(default)]
    pub nodes: Vec<NodeEntry>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub groups: Vec<GroupEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub id: GroupId,
    pub level: Level,
    pub members: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<NodeId>,
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network, TopologyError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| TopologyError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_network(&text)
}

pub fn parse_network(text: &str) -> Result<Network, TopologyError> {
    let doc: TopologyDocument = toml::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))?;
    Network::from_document(doc)
}

impl Network {
    pub fn from_document(doc: TopologyDocument) -> Result<Network, TopologyError> {
        let depth = doc.depth;
        if depth == 0 || depth > MAX_DEPTH {
            return Err(TopologyError::BadDepth(depth));
        }

        let mut names = BTreeMap::new();
        for n in &doc.nodes {
            if names.insert(n.id, n.name.clone()).is_some() {
                return Err(TopologyError::DuplicateNode(n.id));
            }
        }

        let mut edges = doc.edges;
        edges.sort_by_key(|e| e.id);
        for pair in edges.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(TopologyError::DuplicateEdge(pair[0].id));
            }
        }
        for e in &edges {
            for node in [e.from, e.to] {
                if !names.contains_key(&node) {
                    return Err(TopologyError::DanglingNode { edge: e.id, node });
                }
            }
            if e.from == e.to {
                return Err(TopologyError::SelfLoop(e.id));
            }
            if !(e.capacity.is_finite() && e.capacity > 0.0) {
                return Err(TopologyError::BadCapacity(e.id));
            }
            if !(e.delay.is_finite() && e.delay >= 0.0) {
                return Err(TopologyError::BadDelay(e.id));
            }
            if !(0.0..=1.0).contains(&e.loss) {
                return Err(TopologyError::BadLoss(e.id));
            }
        }

        let mut groups: BTreeMap<GroupId, Group> = BTreeMap::new();
        for g in doc.groups {
            if g.level == 0 || g.level > depth {
                return Err(TopologyError::BadLevel { group: g.id, level: g.level, depth });
            }
            if g.members.is_empty() {
                return Err(TopologyError::EmptyGroup(g.id));
            }
            let leader = g.leader.ok_or(TopologyError::LeaderlessGroup(g.id))?;
            let group = Group { id: g.id, level: g.level, members: g.members, leader, parent: None };
            if groups.insert(g.id, group).is_some() {
                return Err(TopologyError::DuplicateGroup(g.id));
            }
        }

        // Level-1 membership.
        let mut home: BTreeMap<NodeId, GroupId> = BTreeMap::new();
        for g in groups.values().filter(|g| g.level == 1) {
            for &m in &g.members {
                let node = NodeId(m);
                if !names.contains_key(&node) {
                    return Err(TopologyError::UnknownMember { group: g.id, member: m, level: 1 });
                }
                if let Some(first) = home.insert(node, g.id) {
                    return Err(TopologyError::NodeInTwoGroups { node, first, second: g.id });
                }
            }
        }
        if let Some(node) = names.keys().find(|n| !home.contains_key(n)) {
            return Err(TopologyError::UnassignedNode(*node));
        }

        // Parent links for levels >= 2.
        let mut parents: BTreeMap<GroupId, GroupId> = BTreeMap::new();
        for g in groups.values().filter(|g| g.level >= 2) {
            for &m in &g.members {
                let child = GroupId(m);
                match groups.get(&child) {
                    Some(c) if c.level == g.level - 1 => {}
                    _ => return Err(TopologyError::UnknownMember { group: g.id, member: m, level: g.level }),
                }
                if let Some(first) = parents.insert(child, g.id) {
                    return Err(TopologyError::GroupInTwoParents { child, first, second: g.id });
                }
            }
        }
        let roots = groups.values().filter(|g| g.level == depth).count();
        if roots != 1 {
            return Err(TopologyError::RootCount { depth, found: roots });
        }
        for g in groups.values_mut() {
            if g.level < depth {
                g.parent = Some(*parents.get(&g.id).ok_or(TopologyError::OrphanGroup(g.id))?);
            }
        }

        let mut nodes = BTreeMap::new();
        for (&node, name) in &names {
            let mut levels = Vec::with_capacity(depth);
            let mut g = home[&node];
            levels.push(g);
            while let Some(p) = groups[&g].parent {
                levels.push(p);
                g = p;
            }
            debug_assert_eq!(levels.len(), depth);
            nodes.insert(node, NodeInfo { name: name.clone(), vector: GroupVector(levels) });
        }

        for g in groups.values() {
            let ok = nodes.get(&g.leader).is_some_and(|n| n.vector.at(g.level) == g.id);
            if !ok {
                return Err(TopologyError::LeaderOutsideGroup { group: g.id, leader: g.leader });
            }
        }

        let edge_index: HashMap<EdgeId, usize> = edges.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
        let mut out_edges: HashMap<NodeId, Vec<usize>> = HashMap::new();
        let mut crossings: HashMap<(GroupId, GroupId), Vec<usize>> = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            out_edges.entry(e.from).or_default().push(i);
            let (va, vb) = (&nodes[&e.from].vector, &nodes[&e.to].vector);
            for h in 1..=depth {
                if va.at(h) != vb.at(h) {
                    crossings.entry((va.at(h), vb.at(h))).or_default().push(i);
                }
            }
        }

        let net = Network { nodes, edges, edge_index, out_edges, crossings, hierarchy: Hierarchy { depth, groups } };
        net.check_sibling_connectivity()?;
        Ok(net)
    }

    /// Every parent's child groups must form one weakly connected component
    /// through edges running between them.
    fn check_sibling_connectivity(&self) -> Result<(), TopologyError> {
        for parent in self.hierarchy.groups().filter(|g| g.level >= 2) {
            let children: BTreeSet<GroupId> = parent.members.iter().map(|&m| GroupId(m)).collect();
            if children.len() < 2 {
                continue;
            }
            let child_level = parent.level - 1;
            let mut adjacency: BTreeMap<GroupId, BTreeSet<GroupId>> = BTreeMap::new();
            for e in &self.edges {
                let a = self.nodes[&e.from].vector.at(child_level);
                let b = self.nodes[&e.to].vector.at(child_level);
                if a != b && children.contains(&a) && children.contains(&b) {
                    adjacency.entry(a).or_default().insert(b);
                    adjacency.entry(b).or_default().insert(a);
                }
            }
            let start = *children.iter().next().expect("non-empty");
            let mut seen = BTreeSet::from([start]);
            let mut stack = vec![start];
            while let Some(g) = stack.pop() {
                for &n in adjacency.get(&g).into_iter().flatten() {
                    if seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
            if seen.len() != children.len() {
                return Err(TopologyError::DisconnectedSiblings(parent.id));
            }
        }
        Ok(())
    }
}
