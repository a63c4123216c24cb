//! Fixed-width observation vector of a group leader.
//!
//! Layout: `from[k..=h]`, `to[k..=h]` (group ids divided by the largest group
//! id), the leader's queuing delay, then one `(utilization, delay)` pair per
//! candidate slot. Slots past the live candidate count hold [`MASK_SENTINEL`].

use serde::Serialize;

use super::AgentError;
use crate::topology::GroupId;

pub const MASK_SENTINEL: f64 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkObservation {
    pub utilization: f64,
    pub delay: f64,
}

/// What a leader sees when asked to choose a link.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Observation {
    pub from_groups: Vec<GroupId>,
    pub to_groups: Vec<GroupId>,
    pub queuing_delay: f64,
    pub links: Vec<LinkObservation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StateLayout {
    /// Entries per partial group vector, `h - k + 1`.
    pub group_entries: usize,
    pub max_candidates: usize,
    pub max_group_id: u32,
}

impl StateLayout {
    /// Layout for a leader choosing links at `level` with truncation `k`.
    pub fn new(level: usize, k: usize, max_candidates: usize, max_group_id: u32) -> Self {
        StateLayout { group_entries: (level + 1).saturating_sub(k.max(1)), max_candidates, max_group_id }
    }

    pub fn width(&self) -> usize {
        2 * self.group_entries + 1 + 2 * self.max_candidates
    }

    fn links_offset(&self) -> usize {
        2 * self.group_entries + 1
    }
}

pub fn encode_state(obs: &Observation, layout: &StateLayout) -> Result<Vec<f64>, AgentError> {
    if obs.links.len() > layout.max_candidates {
        return Err(AgentError::TooManyCandidates { got: obs.links.len(), max: layout.max_candidates });
    }
    if obs.from_groups.len() != layout.group_entries || obs.to_groups.len() != layout.group_entries {
        return Err(AgentError::GroupEntries {
            expected: layout.group_entries,
            got: obs.from_groups.len().max(obs.to_groups.len()),
        });
    }
    let scale = if layout.max_group_id == 0 { 0.0 } else { 1.0 / layout.max_group_id as f64 };
    let mut v = Vec::with_capacity(layout.width());
    v.extend(obs.from_groups.iter().map(|g| g.0 as f64 * scale));
    v.extend(obs.to_groups.iter().map(|g| g.0 as f64 * scale));
    v.push(obs.queuing_delay);
    for link in &obs.links {
        v.push(link.utilization);
        v.push(link.delay);
    }
    v.resize(layout.width(), MASK_SENTINEL);
    Ok(v)
}

/// Inverse of [`encode_state`] for logging. Group ids are recovered by
/// rounding; the live slot count is read off the sentinels.
pub fn decode_state(v: &[f64], layout: &StateLayout) -> Observation {
    let n = layout.group_entries;
    let id = |x: f64| GroupId((x * layout.max_group_id as f64).round() as u32);
    let links = v[layout.links_offset()..]
        .chunks_exact(2)
        .take_while(|pair| !(pair[0] == MASK_SENTINEL && pair[1] == MASK_SENTINEL))
        .map(|pair| LinkObservation { utilization: pair[0], delay: pair[1] })
        .collect();
    Observation {
        from_groups: v[..n].iter().map(|&x| id(x)).collect(),
        to_groups: v[n..2 * n].iter().map(|&x| id(x)).collect(),
        queuing_delay: v[2 * n],
        links,
    }
}
