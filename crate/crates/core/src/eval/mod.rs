//! Normalized-MLU evaluation against the LP optimum.
//!
//! Every sample is routed by a [`Router`] on its input matrix and scored on
//! its target matrix; the ratio to the oracle optimum on the same target is
//! the normalized MLU. Pairs whose every path crosses a failed edge are
//! reported and their demand is dropped on both sides, so the router and the
//! oracle are compared on the same servable traffic.

mod cluster;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{mask_failed_paths, Model};
use crate::network::{edge_flows, DemandMatrix, PathSet, SplitConfig, Topology};
use crate::oracle::{solve_mlu_lp, OracleSolution, OracleStatus};
use crate::training::Sample;

pub use cluster::{
    gen_dynamic_cluster, ClusterConfig, ClusterFile, ClusterSnapshot, ClusterSnapshotFile, ScenarioCluster, Variation,
};

/// Anything that maps an instance to split ratios.
pub trait Router: Sync {
    fn name(&self) -> String;

    fn route(&self, topology: &Topology, pathset: &PathSet, demands: &DemandMatrix) -> Result<SplitConfig>;
}

impl Router for Model {
    fn name(&self) -> String {
        format!("{:?} operator, T = {}", self.config().operator, self.config().iterations).to_lowercase()
    }

    fn route(&self, topology: &Topology, pathset: &PathSet, demands: &DemandMatrix) -> Result<SplitConfig> {
        Ok(Model::route(self, topology, pathset, demands)?.split)
    }
}

/// Equal split over each pair's surviving paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRouter;

impl Router for UniformRouter {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn route(&self, topology: &Topology, pathset: &PathSet, _: &DemandMatrix) -> Result<SplitConfig> {
        let mut r = vec![0.0; pathset.num_paths()];
        for i in 0..pathset.num_pairs() {
            let alive: Vec<usize> = pathset
                .path_range(i)
                .filter(|&p| pathset.path(p).iter().all(|&e| !topology.is_failed(e)))
                .collect();
            for &p in &alive {
                r[p] = 1.0 / alive.len() as f64;
            }
        }
        Ok(SplitConfig::new(r))
    }
}

/// The LP optimum itself, mapped back onto the full path list.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleRouter;

impl Router for OracleRouter {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn route(&self, topology: &Topology, pathset: &PathSet, demands: &DemandMatrix) -> Result<SplitConfig> {
        let (survivors, origin) = mask_failed_paths(pathset, topology);
        let sol = solve_mlu_lp(topology, &survivors, &servable(demands, pathset, topology))?;
        if !sol.is_optimal() {
            return Err(Error::Infeasible(format!("oracle status {:?}", sol.status)));
        }
        let mut r = vec![0.0; pathset.num_paths()];
        for (k, &p) in origin.iter().enumerate() {
            r[p] = sol.split_opt.ratios[k];
        }
        Ok(SplitConfig::new(r))
    }
}

/// Pairs of `pathset` with no path avoiding failed edges.
pub fn dead_pairs(pathset: &PathSet, topology: &Topology) -> Vec<usize> {
    (0..pathset.num_pairs())
        .filter(|&i| {
            pathset
                .path_range(i)
                .all(|p| pathset.path(p).iter().any(|&e| topology.is_failed(e)))
        })
        .collect()
}

/// `demands` without the pairs that cannot be served.
fn servable(demands: &DemandMatrix, pathset: &PathSet, topology: &Topology) -> DemandMatrix {
    let mut d = demands.clone();
    for i in dead_pairs(pathset, topology) {
        let (s, t) = pathset.pair(i);
        d.set(s, t, 0.0);
    }
    d
}

/// Oracle solutions keyed by a digest of the instance.
#[derive(Debug, Default)]
pub struct OracleCache {
    entries: Mutex<HashMap<[u8; 32], Arc<OracleSolution>>>,
}

fn instance_digest(topology: &Topology, pathset: &PathSet, demands: &DemandMatrix) -> [u8; 32] {
    let mut h = Sha256::new();
    for &c in topology.capacities() {
        h.update(c.to_le_bytes());
    }
    for &(u, v) in topology.edges() {
        h.update((u as u64).to_le_bytes());
        h.update((v as u64).to_le_bytes());
    }
    for i in 0..pathset.num_pairs() {
        let (s, t) = pathset.pair(i);
        h.update([0xff]);
        h.update((s as u64).to_le_bytes());
        h.update((t as u64).to_le_bytes());
        for p in pathset.path_range(i) {
            h.update([0xfe]);
            for &e in pathset.path(p) {
                h.update((e as u64).to_le_bytes());
            }
        }
    }
    h.update([0xfd]);
    for &(s, t) in pathset.disconnected() {
        h.update((s as u64).to_le_bytes());
        h.update((t as u64).to_le_bytes());
    }
    for &v in demands.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

impl OracleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn solve(&self, topology: &Topology, pathset: &PathSet, demands: &DemandMatrix) -> Result<Arc<OracleSolution>> {
        let key = instance_digest(topology, pathset, demands);
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(Arc::clone(hit));
        }
        let sol = Arc::new(solve_mlu_lp(topology, pathset, demands)?);
        self.entries.lock().unwrap().insert(key, Arc::clone(&sol));
        Ok(sol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub index: usize,
    pub mlu: f64,
    pub optimal_mlu: f64,
    pub normalized_mlu: f64,
    /// Pairs with demand but no surviving path.
    pub infeasible_pairs: usize,
    /// Largest flow on a failed edge (zero when routing respects failures).
    pub failed_edge_flow: f64,
    pub mlu_trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

/// Mean and linearly interpolated percentiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p99: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        };
        Self {
            count: v.len(),
            mean,
            p25: percentile_sorted(&v, 25.0),
            p50: percentile_sorted(&v, 50.0),
            p75: percentile_sorted(&v, 75.0),
            p99: percentile_sorted(&v, 99.0),
            max: v.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// Percentile of ascending `sorted` with linear interpolation between
/// closest ranks (NaN when empty).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 100.0) / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Instance size figures: one dual per edge against one ratio per path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceShape {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_pairs: usize,
    pub num_paths: usize,
    pub edge_to_path_ratio: f64,
}

impl InstanceShape {
    pub fn of(topology: &Topology, pathset: &PathSet) -> Self {
        Self {
            num_nodes: topology.num_nodes(),
            num_edges: topology.num_edges(),
            num_pairs: pathset.num_pairs(),
            num_paths: pathset.num_paths(),
            edge_to_path_ratio: topology.num_edges() as f64 / pathset.num_paths().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub router: String,
    pub samples: Vec<SampleResult>,
    /// Samples dropped because the oracle had no optimum, with the reason.
    pub excluded: Vec<(usize, String)>,
    pub summary: Summary,
    pub infeasible_pairs: usize,
    /// Distinct instance shapes seen, in first-seen order.
    pub shapes: Vec<InstanceShape>,
}

impl EvalReport {
    pub fn normalized(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.normalized_mlu).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,mlu,optimal_mlu,normalized_mlu,infeasible_pairs\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.index, s.mlu, s.optimal_mlu, s.normalized_mlu, s.infeasible_pairs
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub label: String,
    /// Worker threads (0 = all cores). Report contents do not depend on it.
    pub jobs: usize,
    /// Record per-inference wall-clock time (makes reports
    /// non-reproducible).
    pub timing: bool,
    /// Keep the per-iteration MLU trajectory of model routers.
    pub keep_traces: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            label: String::new(),
            jobs: 1,
            timing: false,
            keep_traces: false,
        }
    }
}

/// Normalized MLU below this means the oracle was beaten, which cannot
/// happen for an exact optimum.
pub const NORMALIZED_FLOOR: f64 = 1.0 - 1e-6;

enum Outcome {
    Scored(SampleResult),
    Excluded(String),
}

fn score(
    index: usize,
    routing: (SplitConfig, Option<Vec<f64>>),
    sample: &Sample,
    cache: &OracleCache,
    wall_ms: Option<f64>,
) -> Result<Outcome> {
    let (split, mlu_trace) = routing;
    let (topology, pathset) = (&*sample.topology, &*sample.pathset);
    let dead = dead_pairs(pathset, topology);
    let infeasible_pairs = dead
        .iter()
        .filter(|&&i| {
            let (s, t) = pathset.pair(i);
            sample.target.get(s, t) > 0.0
        })
        .count();
    let target = servable(&sample.target, pathset, topology);
    let (survivors, _) = mask_failed_paths(pathset, topology);
    let sol = cache.solve(topology, &survivors, &target)?;
    if sol.status != OracleStatus::Optimal {
        return Ok(Outcome::Excluded(format!("oracle status {:?}", sol.status)));
    }
    let flows = edge_flows(topology, pathset, &target, &split)?;
    let failed_edge_flow = topology
        .failed_edges()
        .iter()
        .map(|&e| flows.edge_flows[e])
        .fold(0.0, f64::max);
    let normalized_mlu = if sol.mlu_opt > 0.0 {
        flows.mlu / sol.mlu_opt
    } else if flows.mlu == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(Outcome::Scored(SampleResult {
        index,
        mlu: flows.mlu,
        optimal_mlu: sol.mlu_opt,
        normalized_mlu,
        infeasible_pairs,
        failed_edge_flow,
        mlu_trace,
        wall_ms,
    }))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn collect_report(
    router: String,
    options: &EvalOptions,
    samples: &[Sample],
    outcomes: Vec<Result<Outcome>>,
) -> Result<EvalReport> {
    let mut scored = Vec::new();
    let mut excluded = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o? {
            Outcome::Scored(r) => scored.push(r),
            Outcome::Excluded(why) => excluded.push((i, why)),
        }
    }
    let mut shapes: Vec<InstanceShape> = Vec::new();
    for s in samples {
        let shape = InstanceShape::of(&s.topology, &s.pathset);
        if !shapes.contains(&shape) {
            shapes.push(shape);
        }
    }
    let normalized: Vec<f64> = scored.iter().map(|s| s.normalized_mlu).collect();
    Ok(EvalReport {
        label: options.label.clone(),
        router,
        infeasible_pairs: scored.iter().map(|s| s.infeasible_pairs).sum(),
        summary: Summary::of(&normalized),
        samples: scored,
        excluded,
        shapes,
    })
}

/// Scores `router` on every sample.
pub fn evaluate(router: &dyn Router, samples: &[Sample], options: &EvalOptions, cache: &OracleCache) -> Result<EvalReport> {
    let outcomes = with_pool(options.jobs, || {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let started = Instant::now();
                let split = router.route(&s.topology, &s.pathset, &s.input)?;
                let wall = options.timing.then(|| started.elapsed().as_secs_f64() * 1e3);
                score(i, (split, None), s, cache, wall)
            })
            .collect::<Vec<_>>()
    })?;
    collect_report(router.name(), options, samples, outcomes)
}

/// Like [`evaluate`] for a model, additionally keeping per-iteration MLU
/// trajectories when requested.
pub fn evaluate_model(model: &Model, samples: &[Sample], options: &EvalOptions, cache: &OracleCache) -> Result<EvalReport> {
    let outcomes = with_pool(options.jobs, || {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let started = Instant::now();
                let routing = model.route(&s.topology, &s.pathset, &s.input)?;
                let wall = options.timing.then(|| started.elapsed().as_secs_f64() * 1e3);
                let trace = options
                    .keep_traces
                    .then(|| routing.trace.iter().map(|t| t.mlu).collect());
                score(i, (routing.split, trace), s, cache, wall)
            })
            .collect::<Vec<_>>()
    })?;
    collect_report(Router::name(model), options, samples, outcomes)
}

/// Draws `n_failures` distinct edges per sample (sample `i` uses ChaCha stream
/// `i` of `seed`), fails them and evaluates on the degraded topologies.
pub fn failure_samples(samples: &[Sample], n_failures: usize, seed: u64) -> Result<Vec<(Sample, Vec<usize>)>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let ne = s.topology.num_edges();
            if n_failures >= ne {
                return Err(Error::Config(format!("{n_failures} failures on {ne} edges")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut failed = sample_indices(&mut rng, ne, n_failures).into_vec();
            failed.sort_unstable();
            let topology = Arc::new(s.topology.with_failed_edges(&failed)?);
            Ok((
                Sample {
                    topology,
                    pathset: Arc::clone(&s.pathset),
                    input: s.input.clone(),
                    target: s.target.clone(),
                },
                failed,
            ))
        })
        .collect()
}

/// Failure scenario evaluation; with zero failures this is [`evaluate`].
pub fn failure_eval(
    router: &dyn Router,
    samples: &[Sample],
    n_failures: usize,
    seed: u64,
    options: &EvalOptions,
    cache: &OracleCache,
) -> Result<EvalReport> {
    let degraded: Vec<Sample> = failure_samples(samples, n_failures, seed)?
        .into_iter()
        .map(|(s, _)| s)
        .collect();
    evaluate(router, &degraded, options, cache)
}

/// Evaluates a model trained elsewhere on a different topology's samples.
/// Nothing about the model is adapted; the report is labeled with both ends.
pub fn transfer_eval(
    model: &Model,
    source: &str,
    target: &str,
    samples: &[Sample],
    options: &EvalOptions,
    cache: &OracleCache,
) -> Result<EvalReport> {
    let options = EvalOptions {
        label: format!("{source} -> {target}"),
        ..options.clone()
    };
    evaluate_model(model, samples, &options, cache)
}

/// Per-iteration `(iteration, mlu, normalized_mlu)` rows for one instance;
/// `T + 1` rows including the initial state.
pub fn dump_trace(model: &Model, topology: &Topology, pathset: &PathSet, demands: &DemandMatrix) -> Result<Vec<(usize, f64, f64)>> {
    let routing = model.route(topology, pathset, demands)?;
    let (survivors, _) = mask_failed_paths(pathset, topology);
    let sol = solve_mlu_lp(topology, &survivors, &servable(demands, pathset, topology))?;
    if !sol.is_optimal() {
        return Err(Error::Infeasible(format!("oracle status {:?}", sol.status)));
    }
    Ok(routing
        .trace
        .iter()
        .map(|t| {
            let norm = if sol.mlu_opt > 0.0 { t.mlu / sol.mlu_opt } else { 1.0 };
            (t.iteration, t.mlu, norm)
        })
        .collect())
}

/// CSV with header `iteration,mlu,normalized_mlu`.
pub fn trace_to_csv(rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("iteration,mlu,normalized_mlu\n");
    for (i, m, n) in rows {
        out.push_str(&format!("{i},{m},{n}\n"));
    }
    out
}

#[cfg(test)]
mod tests;
