//! Random hierarchies and a brute-force path enumerator shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use hdqr::topology::{Edge, EdgeId, GroupEntry, GroupId, NodeEntry, NodeId, TopologyDocument};
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn three_link_config_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/three_link.toml")
}

/// A random hierarchy of depth 2 or 3 with at most 32 nodes. Level-1 groups
/// are bidirectional chains; every ordered pair of sibling groups gets one
/// direct link, plus a few random extra links anywhere.
pub fn random_hierarchy<R: Rng>(rng: &mut R) -> TopologyDocument {
    let depth = rng.random_range(2..=3);
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut groups = Vec::new();
    let mut next_edge = 1u32;
    let mut add_edge = |edges: &mut Vec<Edge>, from: u32, to: u32| {
        edges.push(Edge {
            id: EdgeId(next_edge),
            from: NodeId(from),
            to: NodeId(to),
            capacity: 10.0,
            delay: 0.001,
            loss: 0.0,
        });
        next_edge += 1;
    };

    // Level 1: node sets per group.
    let n_groups = rng.random_range(2..=7);
    let mut subtree: Vec<(GroupId, Vec<u32>)> = Vec::new();
    let mut next_node = 1u32;
    for g in 0..n_groups {
        let size = rng.random_range(1..=4);
        let members: Vec<u32> = (next_node..next_node + size).collect();
        next_node += size;
        for &m in &members {
            nodes.push(NodeEntry { id: NodeId(m), name: None });
        }
        for w in members.windows(2) {
            add_edge(&mut edges, w[0], w[1]);
            add_edge(&mut edges, w[1], w[0]);
        }
        let id = GroupId(100 + g);
        groups.push(GroupEntry {
            id,
            level: 1,
            members: members.clone(),
            leader: Some(NodeId(*members.choose(rng).unwrap())),
        });
        subtree.push((id, members));
    }

    // Upper levels: cluster consecutive children until a single root remains.
    for level in 2..=depth {
        let mut parents = Vec::new();
        let mut i = 0;
        let mut k = 0u32;
        while i < subtree.len() {
            let take = if level == depth { subtree.len() - i } else { rng.random_range(1..=3).min(subtree.len() - i) };
            let children = &subtree[i..i + take];
            for a in children {
                for b in children {
                    if a.0 != b.0 {
                        let from = *a.1.choose(rng).unwrap();
                        let to = *b.1.choose(rng).unwrap();
                        add_edge(&mut edges, from, to);
                    }
                }
            }
            let nodes_below: Vec<u32> = children.iter().flat_map(|c| c.1.iter().copied()).collect();
            let id = GroupId(100 * level as u32 + k);
            groups.push(GroupEntry {
                id,
                level,
                members: children.iter().map(|c| c.0 .0).collect(),
                leader: Some(NodeId(*nodes_below.choose(rng).unwrap())),
            });
            parents.push((id, nodes_below));
            i += take;
            k += 1;
        }
        subtree = parents;
    }

    let n = next_node - 1;
    for _ in 0..rng.random_range(0..=4) {
        let from = rng.random_range(1..=n);
        let to = rng.random_range(1..=n);
        if from != to {
            add_edge(&mut edges, from, to);
        }
    }
    TopologyDocument { depth, nodes, edges, groups }
}

/// Every simple directed path from `src` to `dst`, as edge-id sequences.
pub fn enumerate_simple_paths(doc: &TopologyDocument, src: NodeId, dst: NodeId) -> HashSet<Vec<EdgeId>> {
    let mut out = HashSet::new();
    let mut visited = HashSet::from([src]);
    let mut stack = Vec::new();
    dfs(doc, src, dst, &mut visited, &mut stack, &mut out);
    out
}

fn dfs(
    doc: &TopologyDocument,
    at: NodeId,
    dst: NodeId,
    visited: &mut HashSet<NodeId>,
    stack: &mut Vec<EdgeId>,
    out: &mut HashSet<Vec<EdgeId>>,
) {
    if at == dst {
        out.insert(stack.clone());
        return;
    }
    for e in doc.edges.iter().filter(|e| e.from == at) {
        if visited.insert(e.to) {
            stack.push(e.id);
            dfs(doc, e.to, dst, visited, stack, out);
            stack.pop();
            visited.remove(&e.to);
        }
    }
}

/// Whether `edges` walks from `src` to `dst` in `doc`.
pub fn is_connected_walk(doc: &TopologyDocument, src: NodeId, dst: NodeId, edges: &[EdgeId]) -> bool {
    let mut at = src;
    for id in edges {
        match doc.edges.iter().find(|e| e.id == *id) {
            Some(e) if e.from == at => at = e.to,
            _ => return false,
        }
    }
    at == dst
}
