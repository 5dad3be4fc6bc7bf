//! Canonical domain types and the reference flow/MLU evaluation.
//!
//! Edge order in [`Topology`] is the edge indexing used everywhere else:
//! incidence columns, dual vectors and capacity vectors all follow it. Pairs
//! in a [`PathSet`] are kept in lexicographic `(src, dst)` order and paths
//! within a pair in generation order, so global path indices are stable.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::Incidence;

/// Directed capacitated graph.
///
/// A capacity of exactly zero marks a failed edge; such topologies only arise
/// from [`Topology::with_failed_edges`]. Everything loaded from disk or built
/// with [`Topology::new`] has strictly positive capacities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct Topology {
    nodes: Vec<String>,
    edges: Vec<(usize, usize)>,
    capacities: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    nodes: Vec<String>,
    edges: Vec<[usize; 2]>,
    capacities: Vec<f64>,
}

impl TryFrom<TopologyFile> for Topology {
    type Error = Error;

    fn try_from(f: TopologyFile) -> Result<Self> {
        Topology::new(
            f.nodes,
            f.edges.into_iter().map(|[s, d]| (s, d)).collect(),
            f.capacities,
        )
    }
}

impl From<Topology> for TopologyFile {
    fn from(t: Topology) -> Self {
        TopologyFile {
            nodes: t.nodes,
            edges: t.edges.into_iter().map(|(s, d)| [s, d]).collect(),
            capacities: t.capacities,
        }
    }
}

impl Topology {
    pub fn new(nodes: Vec<String>, edges: Vec<(usize, usize)>, capacities: Vec<f64>) -> Result<Self> {
        if edges.len() != capacities.len() {
            return Err(Error::Topology(format!(
                "{} edges but {} capacities",
                edges.len(),
                capacities.len()
            )));
        }
        let n = nodes.len();
        let mut seen = HashSet::new();
        for (i, &(s, d)) in edges.iter().enumerate() {
            if s >= n || d >= n {
                return Err(Error::Topology(format!(
                    "edge {i} ({s}->{d}) references a node outside 0..{n}"
                )));
            }
            if s == d {
                return Err(Error::Topology(format!("edge {i} is a self-loop on node {s}")));
            }
            if !seen.insert((s, d)) {
                return Err(Error::Topology(format!("duplicate directed edge {s}->{d}")));
            }
        }
        for (i, &c) in capacities.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Topology(format!("edge {i} has non-positive capacity {c}")));
            }
        }
        let mut names = HashSet::new();
        for name in &nodes {
            if !names.insert(name.as_str()) {
                return Err(Error::Topology(format!("duplicate node name {name:?}")));
            }
        }
        Ok(Self {
            nodes,
            edges,
            capacities,
        })
    }

    /// Expands undirected links into two antiparallel directed edges, each
    /// carrying the link capacity. Link `i` becomes edges `2i` (as given) and
    /// `2i + 1` (reversed).
    pub fn from_undirected(nodes: Vec<String>, links: &[(usize, usize)], capacities: &[f64]) -> Result<Self> {
        if links.len() != capacities.len() {
            return Err(Error::Topology(format!(
                "{} links but {} capacities",
                links.len(),
                capacities.len()
            )));
        }
        let mut edges = Vec::with_capacity(links.len() * 2);
        let mut caps = Vec::with_capacity(links.len() * 2);
        for (&(a, b), &c) in links.iter().zip(capacities) {
            edges.push((a, b));
            edges.push((b, a));
            caps.push(c);
            caps.push(c);
        }
        Self::new(nodes, edges, caps)
    }

    /// Copy with the given edges' capacities set to zero.
    pub fn with_failed_edges(&self, failed: &[usize]) -> Result<Self> {
        let mut t = self.clone();
        for &e in failed {
            if e >= t.capacities.len() {
                return Err(Error::Topology(format!("failed edge {e} out of range")));
            }
            t.capacities[e] = 0.0;
        }
        Ok(t)
    }

    /// Copy with capacities multiplied edge-wise.
    pub fn scale_capacities(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.capacities.len() {
            return Err(Error::Dimension(format!(
                "{} capacity factors for {} edges",
                factors.len(),
                self.capacities.len()
            )));
        }
        let caps = self.capacities.iter().zip(factors).map(|(c, f)| c * f).collect();
        Self::new(self.nodes.clone(), self.edges.clone(), caps)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn capacity(&self, e: usize) -> f64 {
        self.capacities[e]
    }

    pub fn is_failed(&self, e: usize) -> bool {
        self.capacities[e] == 0.0
    }

    pub fn failed_edges(&self) -> Vec<usize> {
        (0..self.num_edges()).filter(|&e| self.is_failed(e)).collect()
    }

    pub fn find_edge(&self, src: usize, dst: usize) -> Option<usize> {
        self.edges.iter().position(|&e| e == (src, dst))
    }

    /// Outgoing edge indices per node, each list in ascending edge order.
    pub fn out_edges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_nodes()];
        for (i, &(s, _)) in self.edges.iter().enumerate() {
            out[s].push(i);
        }
        out
    }

    /// Sum of capacities of edges incident to each node (in and out).
    pub fn incident_capacity(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.num_nodes()];
        for (&(s, d), &c) in self.edges.iter().zip(&self.capacities) {
            w[s] += c;
            w[d] += c;
        }
        w
    }

    /// Largest capacity over live edges; zero when every edge has failed.
    pub fn max_capacity(&self) -> f64 {
        self.capacities.iter().copied().fold(0.0, f64::max)
    }

    /// True when every node reaches every other node over live edges.
    pub fn is_strongly_connected(&self) -> bool {
        let n = self.num_nodes();
        if n <= 1 {
            return true;
        }
        let reach = |forward: bool| {
            let mut adj = vec![Vec::new(); n];
            for (e, &(s, d)) in self.edges.iter().enumerate() {
                if self.is_failed(e) {
                    continue;
                }
                if forward {
                    adj[s].push(d);
                } else {
                    adj[d].push(s);
                }
            }
            let mut seen = vec![false; n];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen.into_iter().all(|x| x)
        };
        reach(true) && reach(false)
    }
}

/// `|V| x |V|` nonnegative demand matrix with a structurally zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DemandMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    /// Row-major values; validated for shape, sign, finiteness and zero diagonal.
    pub fn from_row_major(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Demand(format!(
                "expected {} entries for {n} nodes, got {}",
                n * n,
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Demand(format!(
                    "entry ({}, {}) = {v} is negative or non-finite",
                    i / n,
                    i % n
                )));
            }
            if i / n == i % n && v != 0.0 {
                return Err(Error::Demand(format!("diagonal entry ({0}, {0}) = {v} is not zero", i / n)));
            }
        }
        Ok(Self { n, values })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.values[s * self.n + t]
    }

    /// Sets an off-diagonal entry. Panics on a diagonal or invalid value.
    pub fn set(&mut self, s: usize, t: usize, v: f64) {
        assert!(s != t, "diagonal of a demand matrix is structurally zero");
        assert!(v.is_finite() && v >= 0.0, "demand must be finite and nonnegative");
        self.values[s * self.n + t] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        assert!(alpha >= 0.0);
        Self {
            n: self.n,
            values: self.values.iter().map(|v| v * alpha).collect(),
        }
    }
}

/// Candidate paths per source-destination pair plus the path-to-edge
/// incidence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    k: usize,
    num_edges: usize,
    pairs: Vec<(usize, usize)>,
    paths: Vec<Vec<Vec<usize>>>,
    offsets: Vec<usize>,
    path_pair: Vec<usize>,
    incidence: Incidence,
    disconnected: Vec<(usize, usize)>,
}

/// On-disk layout of a path set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSetFile {
    pub k: usize,
    pub pairs: Vec<[usize; 2]>,
    pub paths: Vec<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disconnected: Vec<[usize; 2]>,
}

impl PathSet {
    /// Validates every path against `topology` and builds the incidence
    /// matrix. Rows follow pair order, then path order within each pair.
    pub fn new(
        topology: &Topology,
        k: usize,
        pairs: Vec<(usize, usize)>,
        paths: Vec<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        if pairs.len() != paths.len() {
            return Err(Error::Dimension(format!(
                "{} pairs but {} path lists",
                pairs.len(),
                paths.len()
            )));
        }
        let mut global = 0;
        for (&(s, t), list) in pairs.iter().zip(&paths) {
            if s >= topology.num_nodes() || t >= topology.num_nodes() || s == t {
                return Err(Error::Topology(format!("invalid pair ({s}, {t})")));
            }
            if list.len() > k {
                return Err(Error::Config(format!(
                    "pair ({s}, {t}) has {} paths, more than k = {k}",
                    list.len()
                )));
            }
            for path in list {
                validate_path(topology, s, t, path).map_err(|reason| Error::Path {
                    path: global,
                    src: s,
                    dst: t,
                    reason,
                })?;
                global += 1;
            }
        }
        Ok(Self::assemble(topology.num_edges(), k, pairs, paths, Vec::new()))
    }

    fn assemble(
        num_edges: usize,
        k: usize,
        pairs: Vec<(usize, usize)>,
        paths: Vec<Vec<Vec<usize>>>,
        disconnected: Vec<(usize, usize)>,
    ) -> Self {
        let mut offsets = Vec::with_capacity(pairs.len() + 1);
        let mut path_pair = Vec::new();
        let mut flat: Vec<&[usize]> = Vec::new();
        offsets.push(0);
        for (i, list) in paths.iter().enumerate() {
            for p in list {
                flat.push(p);
                path_pair.push(i);
            }
            offsets.push(flat.len());
        }
        let incidence = Incidence::from_rows(&flat, num_edges);
        Self {
            k,
            num_edges,
            pairs,
            paths,
            offsets,
            path_pair,
            incidence,
            disconnected,
        }
    }

    pub fn with_disconnected(mut self, disconnected: Vec<(usize, usize)>) -> Self {
        self.disconnected = disconnected;
        self
    }

    pub fn from_file(file: PathSetFile, topology: &Topology) -> Result<Self> {
        let pairs = file.pairs.iter().map(|&[s, t]| (s, t)).collect();
        let ps = Self::new(topology, file.k, pairs, file.paths)?;
        Ok(ps.with_disconnected(file.disconnected.iter().map(|&[s, t]| (s, t)).collect()))
    }

    pub fn to_file(&self) -> PathSetFile {
        PathSetFile {
            k: self.k,
            pairs: self.pairs.iter().map(|&(s, t)| [s, t]).collect(),
            paths: self.paths.clone(),
            disconnected: self.disconnected.iter().map(|&(s, t)| [s, t]).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn num_paths(&self) -> usize {
        self.path_pair.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair(&self, i: usize) -> (usize, usize) {
        self.pairs[i]
    }

    pub fn disconnected(&self) -> &[(usize, usize)] {
        &self.disconnected
    }

    /// Paths of pair `i`, each an edge-index sequence.
    pub fn paths_of(&self, i: usize) -> &[Vec<usize>] {
        &self.paths[i]
    }

    pub fn all_paths(&self) -> &[Vec<Vec<usize>>] {
        &self.paths
    }

    /// Global index range of the paths of pair `i`.
    pub fn path_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Pair boundaries into the global path order (length `num_pairs + 1`).
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn pair_of_path(&self, p: usize) -> usize {
        self.path_pair[p]
    }

    /// Edge sequence of global path `p`.
    pub fn path(&self, p: usize) -> &[usize] {
        self.incidence.row(p)
    }

    pub fn incidence(&self) -> &Incidence {
        &self.incidence
    }

    /// `D_st` of each path's pair, in global path order (the vector `DM`).
    pub fn path_demands(&self, demands: &DemandMatrix) -> Vec<f64> {
        self.path_pair
            .iter()
            .map(|&i| {
                let (s, t) = self.pairs[i];
                demands.get(s, t)
            })
            .collect()
    }

    /// Restriction to the given pairs (indices into this set, any order is
    /// normalized to ascending). The edge dimension is unchanged.
    pub fn select_pairs(&self, pair_idx: &[usize]) -> Self {
        let mut idx = pair_idx.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let pairs = idx.iter().map(|&i| self.pairs[i]).collect();
        let paths = idx.iter().map(|&i| self.paths[i].clone()).collect();
        Self::assemble(self.num_edges, self.k, pairs, paths, self.disconnected.clone())
    }

    /// Keeps only paths with `keep[p]`; pairs left without paths move to the
    /// disconnected list. Returns the new set and, for each kept path, its
    /// index in `self`.
    pub fn filter_paths(&self, keep: &[bool]) -> (Self, Vec<usize>) {
        assert_eq!(keep.len(), self.num_paths());
        let mut pairs = Vec::new();
        let mut paths = Vec::new();
        let mut disconnected = self.disconnected.clone();
        let mut origin = Vec::new();
        for i in 0..self.num_pairs() {
            let survivors: Vec<usize> = self.path_range(i).filter(|&p| keep[p]).collect();
            if survivors.is_empty() {
                disconnected.push(self.pairs[i]);
                continue;
            }
            pairs.push(self.pairs[i]);
            paths.push(survivors.iter().map(|&p| self.path(p).to_vec()).collect());
            origin.extend(survivors);
        }
        disconnected.sort_unstable();
        (
            Self::assemble(self.num_edges, self.k, pairs, paths, disconnected),
            origin,
        )
    }

    /// Reorders paths within each pair; `perm[i][j]` is the old position of
    /// the path placed at position `j` of pair `i`.
    pub fn permute_within_pairs(&self, perm: &[Vec<usize>]) -> Self {
        assert_eq!(perm.len(), self.num_pairs());
        let paths = self
            .paths
            .iter()
            .zip(perm)
            .map(|(list, order)| {
                assert_eq!(list.len(), order.len());
                order.iter().map(|&j| list[j].clone()).collect()
            })
            .collect();
        Self::assemble(
            self.num_edges,
            self.k,
            self.pairs.clone(),
            paths,
            self.disconnected.clone(),
        )
    }
}

/// Checks that `path` is a simple directed walk from `s` to `t`.
fn validate_path(topology: &Topology, s: usize, t: usize, path: &[usize]) -> std::result::Result<(), String> {
    if path.is_empty() {
        return Err("empty path".into());
    }
    let mut visited = HashSet::from([s]);
    let mut at = s;
    for &e in path {
        if e >= topology.num_edges() {
            return Err(format!("edge index {e} out of range (|E| = {})", topology.num_edges()));
        }
        let (u, v) = topology.edge(e);
        if u != at {
            return Err(format!("edge {e} starts at node {u}, expected {at}"));
        }
        if !visited.insert(v) {
            return Err(format!("node {v} visited twice"));
        }
        at = v;
    }
    if at != t {
        return Err(format!("path ends at node {at}, expected {t}"));
    }
    Ok(())
}

/// Per-path split ratios `r_p`, in global path order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitConfig {
    pub ratios: Vec<f64>,
}

impl SplitConfig {
    pub fn new(ratios: Vec<f64>) -> Self {
        Self { ratios }
    }

    /// Equal split over each pair's paths.
    pub fn uniform(pathset: &PathSet) -> Self {
        let mut ratios = vec![0.0; pathset.num_paths()];
        for i in 0..pathset.num_pairs() {
            let r = pathset.path_range(i);
            let share = 1.0 / r.len() as f64;
            ratios[r].iter_mut().for_each(|x| *x = share);
        }
        Self { ratios }
    }

    /// Checks nonnegativity and per-pair sums. Pairs listed in `skip` (e.g.
    /// pairs whose every path failed) may have all-zero ratios instead.
    pub fn validate(&self, pathset: &PathSet, tol: f64, skip: &[usize]) -> Result<()> {
        if self.ratios.len() != pathset.num_paths() {
            return Err(Error::Dimension(format!(
                "{} ratios for {} paths",
                self.ratios.len(),
                pathset.num_paths()
            )));
        }
        if let Some(p) = self.ratios.iter().position(|&r| !(r >= -tol)) {
            return Err(Error::Numerical(format!("ratio of path {p} is {}", self.ratios[p])));
        }
        for i in 0..pathset.num_pairs() {
            let sum: f64 = self.ratios[pathset.path_range(i)].iter().sum();
            let ok = (sum - 1.0).abs() <= tol || (skip.contains(&i) && sum.abs() <= tol);
            if !ok {
                let (s, t) = pathset.pair(i);
                return Err(Error::Numerical(format!("ratios of pair ({s}, {t}) sum to {sum}")));
            }
        }
        Ok(())
    }
}

/// Edge loads, utilizations and the maximum link utilization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub edge_flows: Vec<f64>,
    pub utilizations: Vec<f64>,
    pub mlu: f64,
}

impl FlowState {
    pub fn from_flows(topology: &Topology, edge_flows: Vec<f64>) -> Self {
        let utilizations: Vec<f64> = edge_flows
            .iter()
            .zip(topology.capacities())
            .map(|(&f, &c)| {
                if c > 0.0 {
                    f / c
                } else if f > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .collect();
        let mlu = utilizations.iter().copied().fold(0.0, f64::max);
        Self {
            edge_flows,
            utilizations,
            mlu,
        }
    }

    /// Index of the first edge attaining the MLU.
    pub fn bottleneck(&self) -> Option<usize> {
        self.utilizations.iter().position(|&u| u == self.mlu)
    }
}

/// `F = ξᵀ (DM ⊙ R)` with utilizations and MLU.
pub fn edge_flows(
    topology: &Topology,
    pathset: &PathSet,
    demands: &DemandMatrix,
    split: &SplitConfig,
) -> Result<FlowState> {
    if split.ratios.len() != pathset.num_paths() {
        return Err(Error::Dimension(format!(
            "incidence has {} rows but split has {} ratios",
            pathset.num_paths(),
            split.ratios.len()
        )));
    }
    if pathset.num_edges() != topology.num_edges() {
        return Err(Error::Dimension(format!(
            "path set built for {} edges, topology has {}",
            pathset.num_edges(),
            topology.num_edges()
        )));
    }
    if demands.num_nodes() != topology.num_nodes() {
        return Err(Error::Dimension(format!(
            "demand matrix is {0}x{0}, topology has {1} nodes",
            demands.num_nodes(),
            topology.num_nodes()
        )));
    }
    let loads: Vec<f64> = pathset
        .path_demands(demands)
        .iter()
        .zip(&split.ratios)
        .map(|(d, r)| d * r)
        .collect();
    let flows = pathset.incidence().tmul(&loads, 1);
    Ok(FlowState::from_flows(topology, flows))
}

/// Maximum link utilization induced by `split` on `demands`.
pub fn mlu_of(split: &SplitConfig, demands: &DemandMatrix, pathset: &PathSet, topology: &Topology) -> Result<f64> {
    Ok(edge_flows(topology, pathset, demands, split)?.mlu)
}

/// A routing problem instance: topology, candidate paths and one demand
/// snapshot.
#[derive(Debug, Clone)]
pub struct Instance {
    pub topology: Topology,
    pub pathset: PathSet,
    pub demands: DemandMatrix,
}
