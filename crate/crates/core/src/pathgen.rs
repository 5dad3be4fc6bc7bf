//! Candidate paths: Yen's loopless K-shortest paths on hop count, and seeded
//! path-order shuffling.
//!
//! Paths are ranked by `(hop count, edge-index sequence)`. The spur search
//! returns the lexicographically smallest shortest path, which keeps Yen's
//! deviation argument valid under this total order, so the output equals the
//! first `k` entries of the sorted list of all simple paths.

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{PathSet, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathGenConfig {
    pub k: usize,
}

impl Default for PathGenConfig {
    fn default() -> Self {
        Self { k: 4 }
    }
}

struct Graph<'a> {
    topology: &'a Topology,
    out: Vec<Vec<usize>>,
}

impl<'a> Graph<'a> {
    fn new(topology: &'a Topology) -> Self {
        Self {
            topology,
            out: topology.out_edges(),
        }
    }

    /// Lexicographically smallest among the minimum-hop paths `from -> to`
    /// avoiding the banned edges and nodes.
    fn lexmin_shortest(
        &self,
        from: usize,
        to: usize,
        banned_edges: &HashSet<usize>,
        banned_nodes: &[bool],
    ) -> Option<Vec<usize>> {
        let n = self.topology.num_nodes();
        let usable = |e: usize| {
            let (u, v) = self.topology.edge(e);
            !self.topology.is_failed(e) && !banned_edges.contains(&e) && !banned_nodes[u] && !banned_nodes[v]
        };
        // hop distance to `to`, by BFS over reversed usable edges
        let mut into = vec![Vec::new(); n];
        for e in 0..self.topology.num_edges() {
            if usable(e) {
                let (u, v) = self.topology.edge(e);
                into[v].push(u);
            }
        }
        let mut dist = vec![usize::MAX; n];
        dist[to] = 0;
        let mut queue = VecDeque::from([to]);
        while let Some(v) = queue.pop_front() {
            for &u in &into[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        if dist[from] == usize::MAX {
            return None;
        }
        let mut path = Vec::with_capacity(dist[from]);
        let mut at = from;
        while at != to {
            let e = *self.out[at]
                .iter()
                .find(|&&e| usable(e) && dist[self.topology.edge(e).1].wrapping_add(1) == dist[at])
                .expect("BFS distance guarantees a successor");
            path.push(e);
            at = self.topology.edge(e).1;
        }
        Some(path)
    }

    fn node_sequence(&self, src: usize, path: &[usize]) -> Vec<usize> {
        let mut nodes = Vec::with_capacity(path.len() + 1);
        nodes.push(src);
        nodes.extend(path.iter().map(|&e| self.topology.edge(e).1));
        nodes
    }
}

/// Up to `k` loopless `s -> t` paths in `(hops, edge sequence)` order.
/// Returns an empty list when `t` is unreachable.
pub fn yen_k_shortest(topology: &Topology, s: usize, t: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = topology.num_nodes();
    if s >= n || t >= n {
        return Err(Error::Topology(format!("pair ({s}, {t}) out of range for {n} nodes")));
    }
    if s == t {
        return Err(Error::Topology(format!("source and destination are both {s}")));
    }
    let graph = Graph::new(topology);
    let no_nodes = vec![false; n];
    let Some(first) = graph.lexmin_shortest(s, t, &HashSet::new(), &no_nodes) else {
        return Ok(Vec::new());
    };
    let mut found: Vec<Vec<usize>> = vec![first];
    let mut candidates: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    while found.len() < k {
        let prev = found.last().unwrap().clone();
        let prev_nodes = graph.node_sequence(s, &prev);
        for i in 0..prev.len() {
            let spur_node = prev_nodes[i];
            let root = &prev[..i];
            let banned_edges: HashSet<usize> = found
                .iter()
                .filter(|p| p.len() > i && &p[..i] == root)
                .map(|p| p[i])
                .collect();
            let mut banned_nodes = vec![false; n];
            for &v in &prev_nodes[..i] {
                banned_nodes[v] = true;
            }
            if let Some(spur) = graph.lexmin_shortest(spur_node, t, &banned_edges, &banned_nodes) {
                let mut total = root.to_vec();
                total.extend(spur);
                if !found.contains(&total) {
                    candidates.insert((total.len(), total));
                }
            }
        }
        match candidates.pop_first() {
            Some((_, p)) => found.push(p),
            None => break,
        }
    }
    Ok(found)
}

/// Paths for every ordered pair `s != t` in lexicographic order. Unreachable
/// pairs are left out of the pair list and recorded as disconnected.
pub fn compute_pathset(topology: &Topology, k: usize) -> Result<PathSet> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut pairs = Vec::new();
    let mut paths = Vec::new();
    let mut disconnected = Vec::new();
    for s in 0..topology.num_nodes() {
        for t in 0..topology.num_nodes() {
            if s == t {
                continue;
            }
            let p = yen_k_shortest(topology, s, t, k)?;
            if p.is_empty() {
                disconnected.push((s, t));
            } else {
                pairs.push((s, t));
                paths.push(p);
            }
        }
    }
    Ok(PathSet::new(topology, k, pairs, paths)?.with_disconnected(disconnected))
}

/// Seeded per-pair permutation of path order. `perm[i][j]` is the old
/// position of the path now at position `j` of pair `i`.
pub fn shuffle_paths_with_permutation(pathset: &PathSet, seed: u64) -> (PathSet, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm: Vec<Vec<usize>> = (0..pathset.num_pairs())
        .map(|i| {
            let mut order: Vec<usize> = (0..pathset.paths_of(i).len()).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    (pathset.permute_within_pairs(&perm), perm)
}

pub fn shuffle_paths(pathset: &PathSet, seed: u64) -> PathSet {
    shuffle_paths_with_permutation(pathset, seed).0
}

/// Maps each global path index of the shuffled set to its index in the
/// original set.
pub fn global_permutation(pathset: &PathSet, perm: &[Vec<usize>]) -> Vec<usize> {
    (0..pathset.num_pairs())
        .flat_map(|i| {
            let base = pathset.path_range(i).start;
            perm[i].iter().map(move |&j| base + j)
        })
        .collect()
}
