//! Seeded synthetic topologies.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Topology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub nodes: usize,
    /// Undirected links; each becomes two directed edges.
    pub links: usize,
    /// Link capacities are drawn uniformly from this set.
    pub capacities: Vec<f64>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            nodes: 8,
            links: 12,
            capacities: vec![10.0, 20.0, 40.0],
        }
    }
}

/// Random connected graph: a random spanning tree plus extra links drawn
/// uniformly among the missing node pairs.
pub fn random_topology(config: &TopologyConfig, seed: u64) -> Result<Topology> {
    let n = config.nodes;
    if n < 2 {
        return Err(Error::Config("need at least two nodes".into()));
    }
    let max_links = n * (n - 1) / 2;
    if config.links < n - 1 || config.links > max_links {
        return Err(Error::Config(format!(
            "{} links cannot form a connected simple graph on {n} nodes (need {}..={max_links})",
            config.links,
            n - 1
        )));
    }
    if config.capacities.is_empty() {
        return Err(Error::Config("empty capacity set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut links = Vec::with_capacity(config.links);
    for v in 1..n {
        let u = rng.random_range(0..v);
        links.push((u, v));
    }
    let mut missing: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !links.iter().any(|&(u, v)| (u, v) == (a, b) || (v, u) == (a, b)))
        .collect();
    while links.len() < config.links {
        let i = rng.random_range(0..missing.len());
        links.push(missing.swap_remove(i));
    }
    links.sort_unstable();
    let caps: Vec<f64> = links
        .iter()
        .map(|_| *config.capacities.choose(&mut rng).unwrap())
        .collect();
    let nodes = (0..n).map(|i| format!("n{i}")).collect();
    Topology::from_undirected(nodes, &links, &caps)
}
