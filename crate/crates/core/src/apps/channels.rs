use std::collections::{BTreeMap, BTreeSet};

use crate::model::NodeId;

/// Largest graph solved by exhaustive search.
pub const EXACT_LIMIT: usize = 10;

/// APs joined by an edge when they are within interference range.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConflictGraph {
    nodes: BTreeSet<NodeId>,
    /// Each edge stored once with the smaller id first.
    edges: BTreeSet<(NodeId, NodeId)>,
}

impl ConflictGraph {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>) -> Self {
        Self {
            nodes: nodes.into_iter().collect(),
            edges: BTreeSet::new(),
        }
    }

    /// Adds an undirected edge. Self-loops and unknown endpoints are ignored;
    /// duplicates collapse.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId) -> bool {
        if a == b || !self.nodes.contains(&a) || !self.nodes.contains(&b) {
            return false;
        }
        self.edges.insert((a.min(b), a.max(b)))
    }

    pub fn nodes(&self) -> &BTreeSet<NodeId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.edges
    }

    pub fn neighbors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == n {
                Some(b)
            } else if b == n {
                Some(a)
            } else {
                None
            }
        })
    }
}

/// Edges whose endpoints share a channel. Unassigned endpoints never conflict.
pub fn conflict_count(g: &ConflictGraph, assignment: &BTreeMap<NodeId, u8>) -> usize {
    g.edges
        .iter()
        .filter(|(a, b)| matches!((assignment.get(a), assignment.get(b)), (Some(x), Some(y)) if x == y))
        .count()
}

/// Channel plan minimising co-channel edges. Exact for up to ten APs, DSATUR
/// greedy beyond. Never returns more conflicts than `current`, and among
/// equally good plans prefers the one changing the fewest APs.
pub fn assign_channels(
    g: &ConflictGraph,
    channels: &[u8],
    current: &BTreeMap<NodeId, u8>,
) -> BTreeMap<NodeId, u8> {
    if channels.is_empty() || g.nodes.is_empty() {
        return current.clone();
    }
    let candidate = if g.nodes.len() <= EXACT_LIMIT {
        exact(g, channels, current)
    } else {
        dsatur(g, channels, current)
    };
    if conflict_count(g, &candidate) < conflict_count(g, current) {
        candidate
    } else if g.nodes.len() <= EXACT_LIMIT && conflict_count(g, &candidate) == conflict_count(g, current) {
        // Same cost as the current plan; exact search already minimised changes.
        candidate
    } else {
        current.clone()
    }
}

/// APs whose channel differs between the two plans.
pub fn channel_changes(current: &BTreeMap<NodeId, u8>, next: &BTreeMap<NodeId, u8>) -> Vec<(NodeId, u8)> {
    next.iter()
        .filter(|(ap, ch)| current.get(ap) != Some(ch))
        .map(|(ap, ch)| (*ap, *ch))
        .collect()
}

fn exact(g: &ConflictGraph, channels: &[u8], current: &BTreeMap<NodeId, u8>) -> BTreeMap<NodeId, u8> {
    let nodes: Vec<NodeId> = g.nodes.iter().copied().collect();
    let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let edges: Vec<(usize, usize)> = g.edges.iter().map(|(a, b)| (index[a], index[b])).collect();
    let cur: Vec<Option<u8>> = nodes.iter().map(|n| current.get(n).copied()).collect();
    let n = nodes.len();
    let k = channels.len();
    let mut digits = vec![0usize; n];
    let mut best: Option<((usize, usize), Vec<usize>)> = None;
    loop {
        let conflicts = edges.iter().filter(|(a, b)| digits[*a] == digits[*b]).count();
        let changes = (0..n).filter(|&i| cur[i] != Some(channels[digits[i]])).count();
        let score = (conflicts, changes);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, digits.clone()));
        }
        // odometer increment
        let mut i = 0;
        while i < n {
            digits[i] += 1;
            if digits[i] < k {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    let (_, digits) = best.expect("at least one assignment");
    nodes.iter().zip(digits).map(|(n, d)| (*n, channels[d])).collect()
}

fn dsatur(g: &ConflictGraph, channels: &[u8], current: &BTreeMap<NodeId, u8>) -> BTreeMap<NodeId, u8> {
    let mut plan: BTreeMap<NodeId, u8> = BTreeMap::new();
    while plan.len() < g.nodes.len() {
        let next = g
            .nodes
            .iter()
            .filter(|n| !plan.contains_key(n))
            .max_by(|a, b| {
                let sat = |n: NodeId| {
                    g.neighbors(n)
                        .filter_map(|m| plan.get(&m))
                        .collect::<BTreeSet<_>>()
                        .len()
                };
                let deg = |n: NodeId| g.neighbors(n).count();
                sat(**a)
                    .cmp(&sat(**b))
                    .then(deg(**a).cmp(&deg(**b)))
                    .then(b.cmp(a))
            })
            .copied()
            .expect("uncoloured node remains");
        let cost = |ch: u8| g.neighbors(next).filter(|m| plan.get(m) == Some(&ch)).count();
        let keep = current.get(&next).copied().filter(|c| channels.contains(c));
        let ch = channels
            .iter()
            .copied()
            .min_by_key(|&ch| (cost(ch), Some(ch) != keep, ch))
            .expect("channels non-empty");
        plan.insert(next, ch);
    }
    plan
}
