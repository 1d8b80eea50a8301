//! Connected clusters of bath spins for the cluster-correlation expansion.
//!
//! Two spins are neighbours when they are at most `r_dipole` apart; a cluster is a
//! set of spins that is connected in that graph. Clusters are enumerated with an
//! ESU-style extension rooted at the smallest member, so every connected set is
//! produced exactly once.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::Position;

/// Default safety cap on the number of clusters in one set.
pub const DEFAULT_CLUSTER_CAP: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<usize>>,
    r_dipole: Option<f64>,
}

impl NeighborGraph {
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Self {
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            adjacency,
            r_dipole: None,
        }
    }

    pub fn r_dipole(&self) -> Option<f64> {
        self.r_dipole
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Edge `(i, j)` iff `|r_i - r_j| <= r_dipole`.
pub fn build_neighbor_graph<'a, I>(positions: I, r_dipole: f64) -> Result<NeighborGraph>
where
    I: IntoIterator<Item = &'a Position>,
{
    if !(r_dipole > 0.0) {
        return Err(Error::invalid("r_dipole", "must be positive"));
    }
    let pos: Vec<Position> = positions.into_iter().copied().collect();
    let r2 = r_dipole * r_dipole;
    let mut adjacency = vec![Vec::new(); pos.len()];
    for i in 0..pos.len() {
        for j in (i + 1)..pos.len() {
            let d2 = (0..3).map(|k| (pos[i][k] - pos[j][k]) * (pos[i][k] - pos[j][k])).sum::<f64>();
            if d2 <= r2 {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    let mut graph = NeighborGraph::from_adjacency(adjacency);
    graph.r_dipole = Some(r_dipole);
    Ok(graph)
}

/// All connected spin sets up to the CCE order, sorted by size and then
/// lexicographically, together with the proper subclusters of each.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub order: usize,
    /// Å, when the graph came from a distance rule.
    pub r_dipole: Option<f64>,
    clusters: Vec<Vec<usize>>,
    subclusters: Vec<Vec<usize>>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn cluster(&self, index: usize) -> &[usize] {
        &self.clusters[index]
    }

    /// Indices (into [`Self::clusters`]) of the proper subclusters of `index`.
    pub fn subclusters(&self, index: usize) -> &[usize] {
        &self.subclusters[index]
    }

    pub fn count_of_size(&self, size: usize) -> usize {
        self.clusters.iter().filter(|c| c.len() == size).count()
    }

    pub fn index_of(&self, members: &[usize]) -> Option<usize> {
        let pos = self
            .clusters
            .binary_search_by(|c| c.len().cmp(&members.len()).then_with(|| c.as_slice().cmp(members)));
        pos.ok()
    }
}

/// Enumerate every connected vertex set of size `1..=order`.
pub fn enumerate_clusters(graph: &NeighborGraph, order: usize) -> Result<ClusterSet> {
    enumerate_clusters_capped(graph, order, DEFAULT_CLUSTER_CAP)
}

pub fn enumerate_clusters_capped(graph: &NeighborGraph, order: usize, cap: usize) -> Result<ClusterSet> {
    if order == 0 {
        return Err(Error::invalid("order", "CCE order must be at least 1"));
    }
    let n = graph.len();
    let mut found: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::with_capacity(order);
    let mut in_set = vec![false; n];
    let mut excluded = vec![0u32; n];

    for root in 0..n {
        current.push(root);
        in_set[root] = true;
        let extension: Vec<usize> = graph.neighbors(root).iter().copied().filter(|&u| u > root).collect();
        mark(graph, root, &mut excluded, 1);
        extend(graph, root, order, cap, &mut current, &mut in_set, &mut excluded, extension, &mut found)?;
        mark(graph, root, &mut excluded, -1);
        in_set[root] = false;
        current.pop();
    }

    for c in &mut found {
        c.sort_unstable();
    }
    found.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));

    let lookup: BTreeMap<&[usize], usize> = found.iter().enumerate().map(|(i, c)| (c.as_slice(), i)).collect();
    let mut subclusters = Vec::with_capacity(found.len());
    let mut scratch = Vec::with_capacity(order);
    for c in &found {
        let k = c.len();
        let mut subs = Vec::new();
        for mask in 1..((1u32 << k) - 1) {
            scratch.clear();
            scratch.extend((0..k).filter(|b| mask & (1 << b) != 0).map(|b| c[b]));
            if let Some(&idx) = lookup.get(scratch.as_slice()) {
                subs.push(idx);
            }
        }
        subs.sort_unstable();
        subclusters.push(subs);
    }

    Ok(ClusterSet {
        order,
        r_dipole: graph.r_dipole,
        clusters: found,
        subclusters,
    })
}

/// Adjust the "touched by the current set" counter for `v` and its neighbours.
fn mark(graph: &NeighborGraph, v: usize, excluded: &mut [u32], delta: i32) {
    excluded[v] = (excluded[v] as i32 + delta) as u32;
    for &u in graph.neighbors(v) {
        excluded[u] = (excluded[u] as i32 + delta) as u32;
    }
}

#[allow(clippy::too_many_arguments)]
fn extend(
    graph: &NeighborGraph,
    root: usize,
    order: usize,
    cap: usize,
    current: &mut Vec<usize>,
    in_set: &mut [bool],
    excluded: &mut [u32],
    mut extension: Vec<usize>,
    found: &mut Vec<Vec<usize>>,
) -> Result<()> {
    if found.len() >= cap {
        return Err(Error::TooManyClusters { cap });
    }
    found.push(current.clone());
    if current.len() == order {
        return Ok(());
    }
    while let Some(w) = extension.pop() {
        // exclusive neighbourhood of w: neighbours not in, nor adjacent to, the current set
        let mut next = extension.clone();
        for &u in graph.neighbors(w) {
            if u > root && !in_set[u] && excluded[u] == 0 {
                next.push(u);
            }
        }
        current.push(w);
        in_set[w] = true;
        mark(graph, w, excluded, 1);
        extend(graph, root, order, cap, current, in_set, excluded, next, found)?;
        mark(graph, w, excluded, -1);
        in_set[w] = false;
        current.pop();
    }
    Ok(())
}
