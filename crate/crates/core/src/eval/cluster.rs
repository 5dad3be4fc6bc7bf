//! Synthetic dynamic-topology scenarios.
//!
//! Clusters are generated in sequence; each applies seeded edits on top of
//! the previous one (node and link additions and removals). Every snapshot
//! inside a cluster additionally scales some link capacities by a factor
//! from a small discrete set. Demands follow a base trace for pairs of
//! original nodes; pairs touching added nodes get gravity-model demands.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{DemandMatrix, PathSet, PathSetFile, Topology};
use crate::pathgen::compute_pathset;
use crate::traffic::{gravity_from_masses, gravity_masses, TrafficTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub n_clusters: usize,
    pub snapshots_per_cluster: usize,
    /// Upper bound on nodes added and on nodes removed per cluster, as a
    /// fraction of the current node count.
    pub node_edit_fraction: f64,
    /// Upper bound on links added and on links removed per cluster.
    pub link_edits: usize,
    /// Factors a link capacity may be scaled by in a snapshot.
    pub capacity_multipliers: Vec<f64>,
    /// Per-link, per-snapshot probability of a capacity change.
    pub capacity_change_prob: f64,
    /// Paths per pair.
    pub k: usize,
    /// Lognormal spread of gravity masses for new pairs.
    pub sigma: f64,
    /// Attempts per edit before it is skipped.
    pub max_retries: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_clusters: 4,
            snapshots_per_cluster: 10,
            node_edit_fraction: 0.1,
            link_edits: 2,
            capacity_multipliers: vec![0.5, 2.0],
            capacity_change_prob: 0.1,
            k: 4,
            sigma: 0.5,
            max_retries: 20,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.snapshots_per_cluster == 0 {
            return Err(Error::Config("need at least one cluster and one snapshot per cluster".into()));
        }
        if !(0.0..=1.0).contains(&self.node_edit_fraction) || !(0.0..=1.0).contains(&self.capacity_change_prob) {
            return Err(Error::Config("edit fractions and probabilities must lie in [0, 1]".into()));
        }
        if self.capacity_change_prob > 0.0 && self.capacity_multipliers.is_empty() {
            return Err(Error::Config("capacity changes need at least one multiplier".into()));
        }
        if self.capacity_multipliers.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Config("capacity multipliers must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// One structural or capacity edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variation {
    AddNode { cluster: usize, node: String },
    RemoveNode { cluster: usize, node: String },
    AddLink { cluster: usize, a: String, b: String },
    RemoveLink { cluster: usize, a: String, b: String },
    ScaleCapacity { cluster: usize, snapshot: usize, a: String, b: String, factor: f64 },
}

#[derive(Debug, Clone)]
pub struct ClusterSnapshot {
    pub cluster: usize,
    /// Index into the base trace the demands follow.
    pub base_index: usize,
    pub topology: Arc<Topology>,
    pub pathset: Arc<PathSet>,
    pub demands: DemandMatrix,
}

#[derive(Debug, Clone)]
pub struct ScenarioCluster {
    pub base: Topology,
    pub snapshots: Vec<ClusterSnapshot>,
    pub variation_log: Vec<Variation>,
}

/// Undirected view used for editing.
#[derive(Debug, Clone)]
struct LinkGraph {
    nodes: Vec<String>,
    links: Vec<(usize, usize, f64)>,
}

impl LinkGraph {
    /// Requires every edge to have its reverse; links keep the order of
    /// their first direction so an unedited graph rebuilds identically.
    fn from_topology(t: &Topology) -> Result<Self> {
        let mut links = Vec::new();
        let mut seen = HashMap::new();
        for (e, &(u, v)) in t.edges().iter().enumerate() {
            if seen.remove(&(v, u)).is_some() {
                continue;
            }
            if t.find_edge(v, u).is_none() {
                return Err(Error::Topology(format!("edge {e} has no reverse; clusters need bidirectional links")));
            }
            seen.insert((u, v), ());
            links.push((u, v, t.capacity(e)));
        }
        Ok(Self {
            nodes: t.nodes().to_vec(),
            links,
        })
    }

    fn build(&self) -> Result<Topology> {
        let pairs: Vec<(usize, usize)> = self.links.iter().map(|&(a, b, _)| (a, b)).collect();
        let caps: Vec<f64> = self.links.iter().map(|l| l.2).collect();
        Topology::from_undirected(self.nodes.clone(), &pairs, &caps)
    }

    fn connected(&self) -> bool {
        !self.nodes.is_empty() && self.build().is_ok_and(|t| t.is_strongly_connected())
    }

    fn has_link(&self, a: usize, b: usize) -> bool {
        self.links.iter().any(|&(u, v, _)| (u, v) == (a, b) || (u, v) == (b, a))
    }

    fn remove_node(&self, n: usize) -> Self {
        let remap = |i: usize| if i > n { i - 1 } else { i };
        let mut nodes = self.nodes.clone();
        nodes.remove(n);
        let links = self
            .links
            .iter()
            .filter(|&&(a, b, _)| a != n && b != n)
            .map(|&(a, b, c)| (remap(a), remap(b), c))
            .collect();
        Self { nodes, links }
    }

    fn name(&self, i: usize) -> String {
        self.nodes[i].clone()
    }
}

fn edit_cluster(
    g: &LinkGraph,
    cluster: usize,
    config: &ClusterConfig,
    fresh: &mut usize,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<Variation>,
) -> LinkGraph {
    let mut g = g.clone();
    let max_nodes = (config.node_edit_fraction * g.nodes.len() as f64).floor() as usize;
    let capacities: Vec<f64> = g.links.iter().map(|l| l.2).collect();

    for _ in 0..rng.random_range(0..=max_nodes) {
        for _ in 0..config.max_retries {
            let n = rng.random_range(0..g.nodes.len());
            let candidate = g.remove_node(n);
            if candidate.nodes.len() >= 2 && candidate.connected() {
                log.push(Variation::RemoveNode {
                    cluster,
                    node: g.name(n),
                });
                g = candidate;
                break;
            }
        }
    }
    for _ in 0..rng.random_range(0..=max_nodes) {
        let name = format!("x{fresh}");
        *fresh += 1;
        let new = g.nodes.len();
        g.nodes.push(name.clone());
        let degree = 2.min(new);
        let peers = rand::seq::index::sample(rng, new, degree).into_vec();
        for p in peers {
            let c = *capacities.choose(rng).unwrap_or(&1.0);
            g.links.push((p, new, c));
        }
        log.push(Variation::AddNode { cluster, node: name });
    }
    for _ in 0..rng.random_range(0..=config.link_edits) {
        for _ in 0..config.max_retries {
            if g.links.is_empty() {
                break;
            }
            let l = rng.random_range(0..g.links.len());
            let mut candidate = g.clone();
            let (a, b, _) = candidate.links.remove(l);
            if candidate.connected() {
                log.push(Variation::RemoveLink {
                    cluster,
                    a: g.name(a),
                    b: g.name(b),
                });
                g = candidate;
                break;
            }
        }
    }
    for _ in 0..rng.random_range(0..=config.link_edits) {
        for _ in 0..config.max_retries {
            let n = g.nodes.len();
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b && !g.has_link(a, b) {
                let c = *capacities.choose(rng).unwrap_or(&1.0);
                g.links.push((a, b, c));
                log.push(Variation::AddLink {
                    cluster,
                    a: g.name(a),
                    b: g.name(b),
                });
                break;
            }
        }
    }
    g
}

/// Base-trace demands for original pairs plus gravity demands for pairs
/// touching nodes the base does not have.
fn snapshot_demands(
    variant: &Topology,
    base: &Topology,
    base_demands: &DemandMatrix,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DemandMatrix> {
    let n = variant.num_nodes();
    let origin: Vec<Option<usize>> = variant.nodes().iter().map(|name| base.node_index(name)).collect();
    let mut d = DemandMatrix::zeros(n);
    let has_new = origin.iter().any(Option::is_none);
    let gravity = if has_new {
        let masses = gravity_masses(variant, sigma, rng)?;
        Some(gravity_from_masses(&masses, base_demands.total())?)
    } else {
        None
    };
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let v = match (origin[s], origin[t], &gravity) {
                (Some(a), Some(b), _) => base_demands.get(a, b),
                (_, _, Some(g)) => g.get(s, t),
                _ => unreachable!("gravity matrix exists whenever a node is new"),
            };
            d.set(s, t, v);
        }
    }
    Ok(d)
}

/// Generates `config.n_clusters` clusters. Cluster 0 is the base topology;
/// later clusters accumulate edits. Snapshot `j` of cluster `c` follows
/// base-trace snapshot `(c · snapshots_per_cluster + j) mod len`.
pub fn gen_dynamic_cluster(
    base: &Topology,
    base_trace: &TrafficTrace,
    config: &ClusterConfig,
    seed: u64,
) -> Result<ScenarioCluster> {
    config.validate()?;
    if base_trace.is_empty() || base_trace.num_nodes() != base.num_nodes() {
        return Err(Error::Dimension("base trace must be non-empty and match the base topology".into()));
    }
    if !base.is_strongly_connected() {
        return Err(Error::Topology("base topology is not connected".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = LinkGraph::from_topology(base)?;
    let mut log = Vec::new();
    let mut fresh = 0;
    let mut snapshots = Vec::new();
    for c in 0..config.n_clusters {
        if c > 0 {
            graph = edit_cluster(&graph, c, config, &mut fresh, &mut rng, &mut log);
        }
        let structure = graph.build()?;
        let pathset = Arc::new(compute_pathset(&structure, config.k)?);
        for j in 0..config.snapshots_per_cluster {
            let base_index = (c * config.snapshots_per_cluster + j) % base_trace.len();
            let mut factors = vec![1.0; structure.num_edges()];
            for (l, &(a, b, _)) in graph.links.iter().enumerate() {
                if rng.random_bool(config.capacity_change_prob) {
                    let f = *config.capacity_multipliers.choose(&mut rng).unwrap();
                    factors[2 * l] = f;
                    factors[2 * l + 1] = f;
                    log.push(Variation::ScaleCapacity {
                        cluster: c,
                        snapshot: j,
                        a: graph.name(a),
                        b: graph.name(b),
                        factor: f,
                    });
                }
            }
            let topology = structure.scale_capacities(&factors)?;
            let demands = snapshot_demands(&topology, base, base_trace.get(base_index), config.sigma, &mut rng)?;
            snapshots.push(ClusterSnapshot {
                cluster: c,
                base_index,
                topology: Arc::new(topology),
                pathset: Arc::clone(&pathset),
                demands,
            });
        }
    }
    Ok(ScenarioCluster {
        base: base.clone(),
        snapshots,
        variation_log: log,
    })
}

/// On-disk layout of a scenario cluster. Path sets are stored once per
/// cluster; demands are row-major `|V|²` vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterFile {
    pub base: Topology,
    pub pathsets: Vec<PathSetFile>,
    pub snapshots: Vec<ClusterSnapshotFile>,
    pub variation_log: Vec<Variation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSnapshotFile {
    pub cluster: usize,
    pub base_index: usize,
    pub topology: Topology,
    pub demands: Vec<f64>,
}

impl ScenarioCluster {
    pub fn to_file(&self) -> ClusterFile {
        let mut pathsets: Vec<PathSetFile> = Vec::new();
        let mut last: Option<&Arc<PathSet>> = None;
        for s in &self.snapshots {
            if !last.is_some_and(|p| Arc::ptr_eq(p, &s.pathset)) {
                pathsets.push(s.pathset.to_file());
                last = Some(&s.pathset);
            }
        }
        ClusterFile {
            base: self.base.clone(),
            pathsets,
            snapshots: self
                .snapshots
                .iter()
                .map(|s| ClusterSnapshotFile {
                    cluster: s.cluster,
                    base_index: s.base_index,
                    topology: (*s.topology).clone(),
                    demands: s.demands.values().to_vec(),
                })
                .collect(),
            variation_log: self.variation_log.clone(),
        }
    }

    /// Rebuilds a cluster; snapshot `i` uses path set `cluster` of the file.
    pub fn from_file(file: ClusterFile) -> Result<Self> {
        let mut shared: Vec<Option<Arc<PathSet>>> = vec![None; file.pathsets.len()];
        let mut snapshots = Vec::with_capacity(file.snapshots.len());
        for s in file.snapshots {
            let slot = shared
                .get_mut(s.cluster)
                .ok_or_else(|| Error::Parse(format!("snapshot refers to missing cluster {}", s.cluster)))?;
            let pathset = match slot {
                Some(p) => Arc::clone(p),
                None => {
                    let p = Arc::new(PathSet::from_file(file.pathsets[s.cluster].clone(), &s.topology)?);
                    *slot = Some(Arc::clone(&p));
                    p
                }
            };
            let demands = DemandMatrix::from_row_major(s.topology.num_nodes(), s.demands)?;
            snapshots.push(ClusterSnapshot {
                cluster: s.cluster,
                base_index: s.base_index,
                topology: Arc::new(s.topology),
                pathset,
                demands,
            });
        }
        Ok(Self {
            base: file.base,
            snapshots,
            variation_log: file.variation_log,
        })
    }

    /// Samples scored on their own demands.
    pub fn samples(&self) -> Vec<crate::training::Sample> {
        self.snapshots
            .iter()
            .map(|s| crate::training::Sample::exact(Arc::clone(&s.topology), Arc::clone(&s.pathset), s.demands.clone()))
            .collect()
    }
}
