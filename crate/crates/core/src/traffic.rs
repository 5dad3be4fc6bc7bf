//! Demand synthesis, demand prediction and sub-traffic-matrix partitioning.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{DemandMatrix, PathSet, Topology};

/// Gravity-model demand with node masses `w_n` given explicitly:
/// `D_st = total * w_s w_t / Σ_{u≠v} w_u w_v`.
pub fn gravity_from_masses(masses: &[f64], total_demand: f64) -> Result<DemandMatrix> {
    if !(total_demand >= 0.0 && total_demand.is_finite()) {
        return Err(Error::Config(format!("total demand {total_demand} must be nonnegative")));
    }
    if let Some(i) = masses.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::Topology(format!("node {i} has zero gravity mass (isolated)")));
    }
    let n = masses.len();
    let sum: f64 = masses.iter().sum();
    let sq: f64 = masses.iter().map(|w| w * w).sum();
    let denom = sum * sum - sq;
    let mut d = DemandMatrix::zeros(n);
    if n < 2 || total_demand == 0.0 {
        return Ok(d);
    }
    for s in 0..n {
        for t in 0..n {
            if s != t {
                d.set(s, t, total_demand * masses[s] * masses[t] / denom);
            }
        }
    }
    Ok(d)
}

/// Gravity masses: incident capacity of each node times a lognormal factor
/// `exp(N(0, sigma²))`.
pub fn gravity_masses<R: Rng>(topology: &Topology, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!("sigma {sigma} must be nonnegative")));
    }
    let base = topology.incident_capacity();
    if sigma == 0.0 {
        return Ok(base);
    }
    let noise = LogNormal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    Ok(base.into_iter().map(|w| w * noise.sample(rng)).collect())
}

/// One gravity snapshot; `Σ D = total_demand`.
pub fn gravity_tm(topology: &Topology, total_demand: f64, sigma: f64, seed: u64) -> Result<DemandMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masses = gravity_masses(topology, sigma, &mut rng)?;
    gravity_from_masses(&masses, total_demand)
}

/// Time-ordered demand snapshots over a fixed node set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficTrace {
    snapshots: Vec<DemandMatrix>,
}

impl TrafficTrace {
    pub fn new(snapshots: Vec<DemandMatrix>) -> Result<Self> {
        if let Some(first) = snapshots.first() {
            let n = first.num_nodes();
            if let Some(i) = snapshots.iter().position(|d| d.num_nodes() != n) {
                return Err(Error::Demand(format!(
                    "snapshot {i} has {} nodes, expected {n}",
                    snapshots[i].num_nodes()
                )));
            }
        }
        Ok(Self { snapshots })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.snapshots.first().map_or(0, DemandMatrix::num_nodes)
    }

    pub fn snapshots(&self) -> &[DemandMatrix] {
        &self.snapshots
    }

    pub fn get(&self, t: usize) -> &DemandMatrix {
        &self.snapshots[t]
    }

    /// Chronological split: the first `⌊fraction · len⌋` snapshots train.
    pub fn split_index(&self, fraction: f64) -> usize {
        ((self.len() as f64) * fraction).floor() as usize
    }

    /// One CSV row per snapshot, `|V|²` row-major columns, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for d in &self.snapshots {
            let mut first = true;
            for v in d.values() {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut snapshots = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse(format!("demand CSV line {}: {e}", lineno + 1)))?;
            let n = (values.len() as f64).sqrt().round() as usize;
            if n * n != values.len() {
                return Err(Error::Parse(format!(
                    "demand CSV line {} has {} columns, not a square count",
                    lineno + 1,
                    values.len()
                )));
            }
            snapshots.push(
                DemandMatrix::from_row_major(n, values)
                    .map_err(|e| Error::Parse(format!("demand CSV line {}: {e}", lineno + 1)))?,
            );
        }
        Self::new(snapshots)
    }
}

/// Parameters of a synthetic gravity trace; also the sidecar manifest body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub snapshots: usize,
    pub total_demand: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub seed: u64,
}

fn default_sigma() -> f64 {
    0.5
}

/// Independent gravity snapshots; snapshot `i` uses ChaCha stream `i` of the
/// seed, so any snapshot can be regenerated on its own.
pub fn generate_trace(topology: &Topology, config: &TraceConfig) -> Result<TrafficTrace> {
    let snapshots = (0..config.snapshots)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let masses = gravity_masses(topology, config.sigma, &mut rng)?;
            gravity_from_masses(&masses, config.total_demand)
        })
        .collect::<Result<Vec<_>>>()?;
    TrafficTrace::new(snapshots)
}

fn check_history(t: usize, window: usize, min_window: usize, len: usize) -> Result<()> {
    if window < min_window {
        return Err(Error::Config(format!("window {window} is below the minimum {min_window}")));
    }
    if t < window {
        return Err(Error::InsufficientHistory {
            needed: window,
            available: t,
        });
    }
    if t > len {
        return Err(Error::Config(format!("time index {t} beyond trace length {len}")));
    }
    Ok(())
}

/// Entrywise mean of snapshots `t - window .. t`.
pub fn mov_avg_predict(trace: &TrafficTrace, t: usize, window: usize) -> Result<DemandMatrix> {
    check_history(t, window, 1, trace.len())?;
    let n = trace.num_nodes();
    let mut acc = vec![0.0; n * n];
    for d in &trace.snapshots()[t - window..t] {
        for (a, v) in acc.iter_mut().zip(d.values()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= window as f64);
    DemandMatrix::from_row_major(n, acc)
}

/// Per-entry least-squares line over the window, evaluated one step ahead,
/// before clamping.
pub fn lin_reg_raw(trace: &TrafficTrace, t: usize, window: usize) -> Result<Vec<f64>> {
    check_history(t, window, 2, trace.len())?;
    let n = trace.num_nodes();
    let w = window as f64;
    let x_mean = (w - 1.0) / 2.0;
    let sxx: f64 = (0..window).map(|i| (i as f64 - x_mean).powi(2)).sum();
    let hist = &trace.snapshots()[t - window..t];
    let out = (0..n * n)
        .map(|j| {
            let y_mean = hist.iter().map(|d| d.values()[j]).sum::<f64>() / w;
            let sxy: f64 = hist
                .iter()
                .enumerate()
                .map(|(i, d)| (i as f64 - x_mean) * (d.values()[j] - y_mean))
                .sum();
            y_mean + sxy / sxx * (w - x_mean)
        })
        .collect();
    Ok(out)
}

/// [`lin_reg_raw`] with negative predictions clamped to zero.
pub fn lin_reg_predict(trace: &TrafficTrace, t: usize, window: usize) -> Result<DemandMatrix> {
    let n = trace.num_nodes();
    let mut raw = lin_reg_raw(trace, t, window)?;
    for (j, v) in raw.iter_mut().enumerate() {
        if *v < 0.0 || j / n == j % n {
            *v = 0.0;
        }
    }
    DemandMatrix::from_row_major(n, raw)
}

/// Demand predictor used as model input under traffic uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMode {
    Off,
    MovAvg,
    LinReg,
}

/// History window used by the predictors unless configured otherwise.
pub const DEFAULT_WINDOW: usize = 12;

impl UncertaintyMode {
    /// Input matrix for predicting snapshot `t`.
    pub fn input(&self, trace: &TrafficTrace, t: usize, window: usize) -> Result<DemandMatrix> {
        match self {
            UncertaintyMode::Off => Ok(trace.get(t).clone()),
            UncertaintyMode::MovAvg => mov_avg_predict(trace, t, window),
            UncertaintyMode::LinReg => lin_reg_predict(trace, t, window),
        }
    }

    /// Earliest time index with enough history.
    pub fn first_index(&self, window: usize) -> usize {
        match self {
            UncertaintyMode::Off => 0,
            _ => window,
        }
    }
}

/// Partition of the pair list into `s` disjoint groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub s: usize,
    pub groups: Vec<Vec<usize>>,
}

impl PartitionSpec {
    /// Pair `i` goes to group `i mod s`.
    pub fn round_robin(num_pairs: usize, s: usize) -> Result<Self> {
        if s == 0 || s > num_pairs {
            return Err(Error::Config(format!(
                "cannot split {num_pairs} pairs into {s} non-empty groups"
            )));
        }
        let mut groups = vec![Vec::new(); s];
        for i in 0..num_pairs {
            groups[i % s].push(i);
        }
        Ok(Self { s, groups })
    }

    pub fn validate(&self, num_pairs: usize) -> Result<()> {
        if self.groups.len() != self.s {
            return Err(Error::Config(format!("{} groups declared, {} given", self.s, self.groups.len())));
        }
        if let Some(g) = self.groups.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("group {g} is empty")));
        }
        let mut seen = vec![false; num_pairs];
        for &i in self.groups.iter().flatten() {
            if i >= num_pairs || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Config(format!("pair {i} out of range or assigned twice")));
            }
        }
        if seen.iter().any(|x| !x) {
            return Err(Error::Config("partition does not cover every pair".into()));
        }
        let min = self.groups.iter().map(Vec::len).min().unwrap();
        let max = self.groups.iter().map(Vec::len).max().unwrap();
        if max - min > 1 {
            return Err(Error::Config(format!("group sizes range from {min} to {max}")));
        }
        Ok(())
    }
}

/// One group of a partitioned problem. The topology is shared unchanged.
#[derive(Debug, Clone)]
pub struct SubProblem {
    pub pairs: Vec<usize>,
    pub demands: DemandMatrix,
    pub pathset: PathSet,
}

/// Splits demands and paths by pair group; edge indexing is untouched.
pub fn partition_tm(demands: &DemandMatrix, pathset: &PathSet, spec: &PartitionSpec) -> Result<Vec<SubProblem>> {
    spec.validate(pathset.num_pairs())?;
    Ok(spec
        .groups
        .iter()
        .map(|group| {
            let sub = pathset.select_pairs(group);
            let mut d = DemandMatrix::zeros(demands.num_nodes());
            for &(s, t) in sub.pairs() {
                d.set(s, t, demands.get(s, t));
            }
            SubProblem {
                pairs: group.clone(),
                demands: d,
                pathset: sub,
            }
        })
        .collect())
}

/// Restricts a demand matrix to the pairs of `pathset`.
pub fn restrict_demands(demands: &DemandMatrix, pathset: &PathSet) -> DemandMatrix {
    let mut d = DemandMatrix::zeros(demands.num_nodes());
    for &(s, t) in pathset.pairs() {
        d.set(s, t, demands.get(s, t));
    }
    d
}
