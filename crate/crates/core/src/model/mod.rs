//! The learned routing operator.
//!
//! The edge-level operator works on one dual variable per edge. An
//! initialization network maps per-path `[demand, min capacity]` to a
//! potential load Ψ that is summed onto edges (`λ0 = ξᵀΨ`). An update network
//! then maps per-edge `[flow, capacity, λ, mlu]` to `Δλ`, applied `T` times.
//! Split ratios are always recovered as a per-pair softmin of path costs
//! `Λ = ξλ`, so every output satisfies the simplex constraints.
//!
//! The path-level operator starts from uniform splits and lets a network
//! subtract from each ratio, with features taken from the path's most
//! utilized edge. It exists for comparison with the edge-level operator.
//!
//! Both networks see only per-row features, so one set of weights runs on any
//! topology, path count or path order.

mod checkpoint;
mod mlp;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Segments, Tape, TapeError, Tensor, Var};
use crate::error::{Error, Result};
use crate::network::{DemandMatrix, PathSet, SplitConfig, Topology};
use crate::sparse::Incidence;

pub use checkpoint::{ModelCheckpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use mlp::{BoundMlp, Layer, Mlp};

/// Which variables the learned operator updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// One dual variable per edge, ratios recovered by softmin.
    #[default]
    Edge,
    /// Split ratios updated directly, one row per path.
    Path,
}

/// Normalization applied to demand and capacity features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScaling {
    /// Divide demands and capacities by the instance's largest capacity.
    MaxCapacity,
    /// As `MaxCapacity`, and the operator input demands are further divided
    /// by the MLU of the uniform split, so any positive multiple of a demand
    /// matrix produces the same features and the same routing.
    #[default]
    CapacityAndLoad,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub operator: Operator,
    /// Number of update steps `T`.
    pub iterations: usize,
    /// Layer widths of the initialization network (edge operator only).
    pub mlp1_layers: Vec<usize>,
    /// Layer widths of the update network.
    pub mlp2_layers: Vec<usize>,
    pub temperature: f64,
    pub feature_scaling: FeatureScaling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            operator: Operator::Edge,
            iterations: 5,
            mlp1_layers: vec![2, 64, 64, 1],
            mlp2_layers: vec![4, 64, 1],
            temperature: 1.0,
            feature_scaling: FeatureScaling::CapacityAndLoad,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, w: &[usize], input: usize| {
            if w.len() < 2 || w[0] != input || *w.last().unwrap() != 1 || w.contains(&0) {
                Err(Error::Config(format!(
                    "{name} must have input width {input}, output width 1 and no empty layer, got {w:?}"
                )))
            } else {
                Ok(())
            }
        };
        if self.operator == Operator::Edge {
            check("mlp1_layers", &self.mlp1_layers, 2)?;
        }
        check("mlp2_layers", &self.mlp2_layers, 4)?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Output scale of freshly initialized networks.
const OUTPUT_GAIN: f64 = 0.1;

/// A configured operator with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    mlp1: Option<Mlp>,
    mlp2: Mlp,
}

/// Tape handles of a [`Model`]'s parameters.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub mlp1: Option<BoundMlp>,
    pub mlp2: BoundMlp,
}

impl BoundModel {
    /// Parameter handles in [`Model::named_params`] order.
    pub fn vars(&self) -> Vec<Var> {
        self.mlp1.iter().flat_map(|m| m.vars()).chain(self.mlp2.vars()).collect()
    }
}

/// One entry of the unrolled trajectory; entry 0 is the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub mlu: f64,
    /// Dual variables in scaled units (empty for the path operator).
    pub duals: Vec<f64>,
}

/// Handles produced by one unrolled forward pass.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub ratios: Var,
    /// MLU on the input demands at the final iteration.
    pub mlu: Var,
    pub trace: Vec<TraceEntry>,
}

/// Result of routing one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    pub split: SplitConfig,
    pub trace: Vec<TraceEntry>,
    /// Pairs (by index) whose every path crosses a failed edge.
    pub dead_pairs: Vec<usize>,
}

/// Output of a single dual update.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStep {
    pub duals: Vec<f64>,
    pub split: SplitConfig,
    pub mlu: f64,
}

/// An instance converted to the tensors the operator consumes.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    xi: Arc<Incidence>,
    segments: Arc<Segments>,
    /// Scaled demand of each path's pair, `|Φ|×1`.
    path_demand: Tensor,
    /// Scaled demand used by [`mlu_on_target`], `|Φ|×1`.
    target_demand: Tensor,
    capacity: Tensor,
    inv_capacity: Tensor,
    path_min_capacity: Tensor,
    active: Option<Tensor>,
    dead_pairs: Vec<usize>,
    scale: f64,
    load: f64,
}

impl PreparedInstance {
    pub fn new(topology: &Topology, pathset: &PathSet, demands: &DemandMatrix, scaling: FeatureScaling) -> Result<Self> {
        Self::with_target(topology, pathset, demands, demands, scaling)
    }

    /// `input` drives the operator; `target` is what the routing is scored
    /// on (the actual demands when the input is a prediction).
    pub fn with_target(
        topology: &Topology,
        pathset: &PathSet,
        input: &DemandMatrix,
        target: &DemandMatrix,
        scaling: FeatureScaling,
    ) -> Result<Self> {
        if pathset.num_edges() != topology.num_edges() {
            return Err(Error::Dimension(format!(
                "path set built for {} edges, topology has {}",
                pathset.num_edges(),
                topology.num_edges()
            )));
        }
        for d in [input, target] {
            if d.num_nodes() != topology.num_nodes() {
                return Err(Error::Dimension(format!(
                    "demand matrix is {0}x{0}, topology has {1} nodes",
                    d.num_nodes(),
                    topology.num_nodes()
                )));
            }
        }
        let scale = match scaling {
            FeatureScaling::MaxCapacity | FeatureScaling::CapacityAndLoad => topology.max_capacity(),
            FeatureScaling::None => 1.0,
        };
        if !(scale > 0.0) {
            return Err(Error::Topology("every edge has failed".into()));
        }
        let np = pathset.num_paths();
        let active: Vec<bool> = (0..np)
            .map(|p| pathset.path(p).iter().all(|&e| !topology.is_failed(e)))
            .collect();
        let dead_pairs: Vec<usize> = (0..pathset.num_pairs())
            .filter(|&i| pathset.path_range(i).all(|p| !active[p]))
            .collect();
        let mut segments = Segments::new(pathset.offsets().to_vec());
        let all_active = active.iter().all(|&a| a);
        if !all_active {
            segments = segments.with_mask(active.clone());
        }
        let scaled = |v: Vec<f64>| Tensor::column(v.into_iter().map(|x| x / scale).collect());
        let path_min_capacity = (0..np)
            .map(|p| {
                pathset
                    .path(p)
                    .iter()
                    .map(|&e| topology.capacity(e))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let inv_capacity = topology
            .capacities()
            .iter()
            .map(|&c| if c > 0.0 { scale / c } else { 0.0 })
            .collect();
        let mut prep = Self {
            xi: Arc::new(pathset.incidence().clone()),
            segments: Arc::new(segments),
            path_demand: scaled(pathset.path_demands(input)),
            target_demand: scaled(pathset.path_demands(target)),
            capacity: scaled(topology.capacities().to_vec()),
            inv_capacity: Tensor::column(inv_capacity),
            path_min_capacity: scaled(path_min_capacity),
            active: (!all_active).then(|| Tensor::column(active.iter().map(|&a| f64::from(u8::from(a))).collect())),
            dead_pairs,
            scale,
            load: 1.0,
        };
        if scaling == FeatureScaling::CapacityAndLoad {
            let u = prep.uniform_input_mlu();
            if u > 0.0 && u.is_finite() {
                prep.path_demand.data.iter_mut().for_each(|d| *d /= u);
                prep.load = u;
            }
        }
        Ok(prep)
    }

    /// MLU of the uniform split on the scaled input demands.
    fn uniform_input_mlu(&self) -> f64 {
        let r = self.uniform_ratios();
        let load: Vec<f64> = r.data.iter().zip(&self.path_demand.data).map(|(r, d)| r * d).collect();
        self.xi
            .tmul(&load, 1)
            .iter()
            .zip(&self.inv_capacity.data)
            .map(|(f, ic)| f * ic)
            .fold(0.0, f64::max)
    }

    pub fn num_edges(&self) -> usize {
        self.capacity.rows
    }

    pub fn num_paths(&self) -> usize {
        self.path_demand.rows
    }

    /// Pairs whose every path crosses a failed edge.
    pub fn dead_pairs(&self) -> &[usize] {
        &self.dead_pairs
    }

    /// Divisor applied to demands and capacities.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Extra divisor applied to the input demands; internal MLU values times
    /// this are MLUs of the input demand matrix.
    pub fn load(&self) -> f64 {
        self.load
    }

    /// Whether path `p` avoids every failed edge.
    pub fn is_active(&self, p: usize) -> bool {
        self.segments.is_active(p)
    }

    /// Uniform split over the active paths of each pair.
    fn uniform_ratios(&self) -> Tensor {
        let mut r = vec![0.0; self.num_paths()];
        for g in 0..self.segments.num_groups() {
            let act: Vec<usize> = self.segments.group(g).filter(|&p| self.is_active(p)).collect();
            for &p in &act {
                r[p] = 1.0 / act.len() as f64;
            }
        }
        Tensor::column(r)
    }
}

/// Per-edge flows and the MLU they induce for ratios `r` and path demands `d`.
fn flows_and_mlu(tape: &mut Tape, prep: &PreparedInstance, r: Var, d: Var) -> Result<(Var, Var, Var), TapeError> {
    let load = tape.mul(r, d)?;
    let flow = tape.sparse_matmul(&prep.xi, true, load)?;
    let inv_c = tape.constant(prep.inv_capacity.clone());
    let util = tape.mul(flow, inv_c)?;
    let m = tape.max_reduce(util)?;
    Ok((flow, util, m))
}

/// MLU of `ratios` on the prepared target demands.
pub fn mlu_on_target(tape: &mut Tape, prep: &PreparedInstance, ratios: Var) -> Result<Var> {
    let d = tape.constant(prep.target_demand.clone());
    Ok(flows_and_mlu(tape, prep, ratios, d)?.2)
}

/// Tags a non-finite forward value with the iteration it occurred in.
fn at_iteration(iteration: usize) -> impl Fn(TapeError) -> Error {
    move |e| match e {
        TapeError::NonFinite { .. } => Error::Numerical(format!("iteration {iteration}: {e}")),
        other => Error::Tape(other),
    }
}

/// Per-pair softmin of path costs `ξλ`, with failed paths excluded.
fn recover_ratios(tape: &mut Tape, prep: &PreparedInstance, lambda: Var, temperature: f64) -> Result<Var, TapeError> {
    let costs = tape.sparse_matmul(&prep.xi, false, lambda)?;
    tape.softmin_segments(costs, &prep.segments, temperature)
}

/// Split ratios from per-edge dual prices: per-pair softmin of path costs at
/// the given temperature. Paths over failed edges get zero.
pub fn ratios_from_duals(topology: &Topology, pathset: &PathSet, duals: &[f64], temperature: f64) -> Result<SplitConfig> {
    if duals.len() != topology.num_edges() {
        return Err(Error::Dimension(format!(
            "{} duals for {} edges",
            duals.len(),
            topology.num_edges()
        )));
    }
    let prep = PreparedInstance::new(
        topology,
        pathset,
        &DemandMatrix::zeros(topology.num_nodes()),
        FeatureScaling::None,
    )?;
    let mut tape = Tape::new();
    let lambda = tape.constant(Tensor::column(duals.to_vec()));
    let r = recover_ratios(&mut tape, &prep, lambda, temperature)?;
    Ok(SplitConfig::new(tape.value(r).data.clone()))
}

impl Model {
    /// Fresh weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp1 = (config.operator == Operator::Edge).then(|| Mlp::init(&config.mlp1_layers, OUTPUT_GAIN, &mut rng));
        let mlp2 = Mlp::init(&config.mlp2_layers, OUTPUT_GAIN, &mut rng);
        Ok(Self { config, mlp1, mlp2 })
    }

    /// Assembles a model from explicit networks, checking them against the
    /// config.
    pub fn from_parts(config: ModelConfig, mlp1: Option<Mlp>, mlp2: Mlp) -> Result<Self> {
        config.validate()?;
        let expect_mlp1 = config.operator == Operator::Edge;
        match &mlp1 {
            Some(m) if expect_mlp1 && m.widths() == config.mlp1_layers => {}
            None if !expect_mlp1 => {}
            _ => {
                return Err(Error::Config(
                    "initialization network does not match the configured operator".into(),
                ))
            }
        }
        if mlp2.widths() != config.mlp2_layers {
            return Err(Error::Config(format!(
                "update network widths {:?} differ from config {:?}",
                mlp2.widths(),
                config.mlp2_layers
            )));
        }
        Ok(Self { config, mlp1, mlp2 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mlp1(&self) -> Option<&Mlp> {
        self.mlp1.as_ref()
    }

    pub fn mlp2(&self) -> &Mlp {
        &self.mlp2
    }

    /// Total parameter count; depends only on the config.
    pub fn num_params(&self) -> usize {
        self.mlp1.as_ref().map_or(0, Mlp::num_params) + self.mlp2.num_params()
    }

    /// Parameters with stable names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, mlp) in [("mlp1", self.mlp1.as_ref()), ("mlp2", Some(&self.mlp2))] {
            if let Some(m) = mlp {
                for (i, l) in m.layers.iter().enumerate() {
                    out.push((format!("{prefix}.{i}.weight"), &l.weight));
                    out.push((format!("{prefix}.{i}.bias"), &l.bias));
                }
            }
        }
        out
    }

    /// Mutable parameters in [`Model::named_params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for m in self.mlp1.iter_mut().chain(std::iter::once(&mut self.mlp2)) {
            for l in &mut m.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        BoundModel {
            mlp1: self.mlp1.as_ref().map(|m| m.bind(tape, trainable)),
            mlp2: self.mlp2.bind(tape, trainable),
        }
    }

    pub fn prepare(&self, topology: &Topology, pathset: &PathSet, demands: &DemandMatrix) -> Result<PreparedInstance> {
        PreparedInstance::new(topology, pathset, demands, self.config.feature_scaling)
    }

    /// Records the full unrolled forward pass on `tape`.
    pub fn unroll(&self, tape: &mut Tape, bound: &BoundModel, prep: &PreparedInstance) -> Result<Unrolled> {
        match self.config.operator {
            Operator::Edge => self.unroll_edge(tape, bound, prep),
            Operator::Path => self.unroll_path(tape, bound, prep),
        }
    }

    fn init_dual_var(&self, tape: &mut Tape, bound: &BoundModel, prep: &PreparedInstance) -> Result<Var> {
        let mlp1 = bound
            .mlp1
            .as_ref()
            .ok_or_else(|| Error::Config("path operator has no initialization network".into()))?;
        let err = at_iteration(0);
        let d = tape.constant(prep.path_demand.clone());
        let c = tape.constant(prep.path_min_capacity.clone());
        let input = tape.concat_cols(&[d, c]).map_err(&err)?;
        let mut psi = mlp1.apply(tape, input).map_err(&err)?;
        if let Some(mask) = &prep.active {
            let mask = tape.constant(mask.clone());
            psi = tape.mul(psi, mask).map_err(&err)?;
        }
        tape.sparse_matmul(&prep.xi, true, psi).map_err(err)
    }

    fn update_dual_var(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        prep: &PreparedInstance,
        lambda: Var,
        flow: Var,
        mlu: Var,
        iteration: usize,
    ) -> Result<Var> {
        let err = at_iteration(iteration);
        let c = tape.constant(prep.capacity.clone());
        let m = tape.repeat_rows(mlu, prep.num_edges()).map_err(&err)?;
        let input = tape.concat_cols(&[flow, c, lambda, m]).map_err(&err)?;
        let delta = bound.mlp2.apply(tape, input).map_err(&err)?;
        tape.add(lambda, delta).map_err(err)
    }

    fn unroll_edge(&self, tape: &mut Tape, bound: &BoundModel, prep: &PreparedInstance) -> Result<Unrolled> {
        let t = self.config.iterations;
        let d = tape.constant(prep.path_demand.clone());
        let mut lambda = self.init_dual_var(tape, bound, prep)?;
        let mut trace = Vec::with_capacity(t + 1);
        let mut i = 0;
        loop {
            let err = at_iteration(i);
            let r = recover_ratios(tape, prep, lambda, self.config.temperature).map_err(&err)?;
            let (flow, _, m) = flows_and_mlu(tape, prep, r, d).map_err(&err)?;
            trace.push(TraceEntry {
                iteration: i,
                mlu: tape.value(m).item() * prep.load,
                duals: tape.value(lambda).data.clone(),
            });
            if i == t {
                return Ok(Unrolled { ratios: r, mlu: m, trace });
            }
            i += 1;
            lambda = self.update_dual_var(tape, bound, prep, lambda, flow, m, i)?;
        }
    }

    fn unroll_path(&self, tape: &mut Tape, bound: &BoundModel, prep: &PreparedInstance) -> Result<Unrolled> {
        let t = self.config.iterations;
        let np = prep.num_paths();
        let d = tape.constant(prep.path_demand.clone());
        let mut r = tape.constant(prep.uniform_ratios());
        let mut trace = Vec::with_capacity(t + 1);
        let mut i = 0;
        loop {
            let err = at_iteration(i);
            let (_, util, m) = flows_and_mlu(tape, prep, r, d).map_err(&err)?;
            trace.push(TraceEntry {
                iteration: i,
                mlu: tape.value(m).item() * prep.load,
                duals: Vec::new(),
            });
            if i == t {
                return Ok(Unrolled { ratios: r, mlu: m, trace });
            }
            i += 1;
            let err = at_iteration(i);
            let (heavy_util, heavy) = tape.row_max(&prep.xi, util).map_err(&err)?;
            let heavy_cap = heavy
                .iter()
                .map(|e| e.map_or(0.0, |e| prep.capacity.data[e]))
                .collect();
            let heavy_cap = tape.constant(Tensor::column(heavy_cap));
            let m_rep = tape.repeat_rows(m, np).map_err(&err)?;
            let input = tape.concat_cols(&[heavy_util, m_rep, d, heavy_cap]).map_err(&err)?;
            let delta = bound.mlp2.apply(tape, input).map_err(&err)?;
            let stepped = tape.sub(r, delta).map_err(&err)?;
            let clamped = tape.relu(stepped).map_err(&err)?;
            r = tape.normalize_segments(clamped, &prep.segments).map_err(err)?;
        }
    }

    /// Routes one instance without recording gradients.
    pub fn route(&self, topology: &Topology, pathset: &PathSet, demands: &DemandMatrix) -> Result<Routing> {
        let prep = self.prepare(topology, pathset, demands)?;
        self.route_prepared(&prep)
    }

    pub fn route_prepared(&self, prep: &PreparedInstance) -> Result<Routing> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.unroll(&mut tape, &bound, prep)?;
        Ok(Routing {
            split: SplitConfig::new(tape.value(out.ratios).data.clone()),
            trace: out.trace,
            dead_pairs: prep.dead_pairs.clone(),
        })
    }

    /// Initial dual variables `λ0 = ξᵀΨ` in scaled units.
    pub fn init_dual(&self, prep: &PreparedInstance) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let v = self.init_dual_var(&mut tape, &bound, prep)?;
        Ok(tape.value(v).data.clone())
    }

    /// Applies one dual update to `duals`. The returned split and MLU are
    /// those induced by the input duals, which the update was computed from.
    pub fn dual_update_step(&self, prep: &PreparedInstance, duals: &[f64]) -> Result<DualStep> {
        if duals.len() != prep.num_edges() {
            return Err(Error::Dimension(format!(
                "{} duals for {} edges",
                duals.len(),
                prep.num_edges()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let err = at_iteration(0);
        let lambda = tape.constant(Tensor::column(duals.to_vec()));
        let d = tape.constant(prep.path_demand.clone());
        let r = recover_ratios(&mut tape, prep, lambda, self.config.temperature).map_err(&err)?;
        let (flow, _, m) = flows_and_mlu(&mut tape, prep, r, d).map_err(&err)?;
        let next = self.update_dual_var(&mut tape, &bound, prep, lambda, flow, m, 1)?;
        Ok(DualStep {
            duals: tape.value(next).data.clone(),
            split: SplitConfig::new(tape.value(r).data.clone()),
            mlu: tape.value(m).item() * prep.load,
        })
    }

    /// Evaluates the update network on a grid of `(utilization / mlu, λ)` at a
    /// fixed scaled capacity and MLU.
    pub fn mlp2_response_sweep(&self, grid: &SweepGrid) -> Result<Vec<SweepPoint>> {
        if self.config.operator != Operator::Edge {
            return Err(Error::Config("response sweeps need the edge operator".into()));
        }
        grid.validate()?;
        let mut rows = Vec::with_capacity(grid.util_steps * grid.lambda_steps);
        let mut points = Vec::with_capacity(rows.capacity());
        for i in 0..grid.util_steps {
            let u = lerp(grid.util_range, i, grid.util_steps);
            for j in 0..grid.lambda_steps {
                let l = lerp(grid.lambda_range, j, grid.lambda_steps);
                let flow = u * grid.mlu * grid.capacity;
                rows.extend([flow, grid.capacity, l, grid.mlu]);
                points.push((u, l));
            }
        }
        let x = Tensor::new(points.len(), 4, rows);
        let y = self.mlp2.eval(&x)?;
        Ok(points
            .into_iter()
            .zip(y.data)
            .map(|((util_ratio, lambda), delta)| SweepPoint {
                util_ratio,
                lambda,
                delta,
            })
            .collect())
    }
}

fn lerp((lo, hi): (f64, f64), i: usize, n: usize) -> f64 {
    if n == 1 {
        lo
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Input grid for [`Model::mlp2_response_sweep`], in scaled units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub capacity: f64,
    pub mlu: f64,
    pub util_range: (f64, f64),
    pub util_steps: usize,
    pub lambda_range: (f64, f64),
    pub lambda_steps: usize,
}

impl SweepGrid {
    /// Capacity is the instance median and the MLU and λ range are taken
    /// from the recorded trajectory.
    pub fn from_trace(prep: &PreparedInstance, trace: &[TraceEntry], steps: usize) -> Result<Self> {
        let duals: Vec<f64> = trace.iter().flat_map(|t| t.duals.iter().copied()).collect();
        if duals.is_empty() {
            return Err(Error::Config("trace carries no dual variables".into()));
        }
        let mut caps: Vec<f64> = prep.capacity.data.iter().copied().filter(|&c| c > 0.0).collect();
        caps.sort_by(f64::total_cmp);
        let lo = duals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = duals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Ok(Self {
            capacity: caps[caps.len() / 2],
            mlu: trace.iter().map(|t| t.mlu).sum::<f64>() / trace.len() as f64 / prep.load,
            util_range: (0.0, 1.0),
            util_steps: steps,
            lambda_range: (lo, hi),
            lambda_steps: steps,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.util_steps == 0 || self.lambda_steps == 0 {
            return Err(Error::Config("sweep grid needs at least one step per axis".into()));
        }
        if ![self.capacity, self.mlu, self.util_range.0, self.util_range.1, self.lambda_range.0, self.lambda_range.1]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Config("sweep grid values must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub util_ratio: f64,
    pub lambda: f64,
    pub delta: f64,
}

/// CSV with header `util_ratio,lambda,delta_lambda`.
pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("util_ratio,lambda,delta_lambda\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.util_ratio, p.lambda, p.delta));
    }
    out
}

/// A copy of `pathset` keeping only paths that avoid failed edges, with the
/// original index of every surviving path. Pairs left without paths move to
/// the disconnected list.
pub fn mask_failed_paths(pathset: &PathSet, topology: &Topology) -> (PathSet, Vec<usize>) {
    let keep: Vec<bool> = (0..pathset.num_paths())
        .map(|p| pathset.path(p).iter().all(|&e| !topology.is_failed(e)))
        .collect();
    pathset.filter_paths(&keep)
}

#[cfg(test)]
mod tests;
