//! End-to-end training of the routing operator.
//!
//! The loss of one sample is the MLU of the operator's final split on the
//! sample's actual demands; a batch loss is the mean over samples. In
//! uncertainty mode the operator sees a predicted matrix while the loss still
//! uses the actual one. Parameters are updated with Adam.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TapeError, Tensor};
use crate::error::{Error, Result};
use crate::model::{mlu_on_target, Model, ModelCheckpoint, ModelConfig, PreparedInstance, TrainingMeta};
use crate::network::{DemandMatrix, PathSet, Topology};
use crate::traffic::{PartitionSpec, TrafficTrace, UncertaintyMode, DEFAULT_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub uncertainty_mode: UncertaintyMode,
    pub window: usize,
    /// Fraction of the trace (chronologically first) used for training.
    pub train_fraction: f64,
    /// Fraction of the training part held out for early stopping.
    pub validation_fraction: f64,
    /// Steps without validation improvement before stopping.
    pub patience: usize,
    /// Validation is evaluated every this many steps.
    pub eval_every: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Worker threads for per-sample passes (0 = all cores). Results do not
    /// depend on it.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 1e-3,
            steps: 1000,
            batch_size: 16,
            seed: 0,
            uncertainty_mode: UncertaintyMode::Off,
            window: DEFAULT_WINDOW,
            train_fraction: 0.75,
            validation_fraction: 0.125,
            patience: 200,
            eval_every: 10,
            grad_clip: Some(10.0),
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction must be in (0, 1], got {}", self.train_fraction)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// How sub-problems are drawn when the pair set is partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    /// Each sample uses a uniformly drawn group.
    AllGroups,
    /// Every sample uses this group.
    OneGroup(usize),
}

/// One training or validation sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub topology: Arc<Topology>,
    pub pathset: Arc<PathSet>,
    /// Matrix the operator sees.
    pub input: DemandMatrix,
    /// Matrix the routing is scored on.
    pub target: DemandMatrix,
}

impl Sample {
    pub fn exact(topology: Arc<Topology>, pathset: Arc<PathSet>, demands: DemandMatrix) -> Self {
        Self {
            topology,
            pathset,
            input: demands.clone(),
            target: demands,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub validation_loss: Option<f64>,
    /// Wall-clock time of the step; excluded from determinism checks.
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best weights seen on the validation slice (or the last weights when
    /// there is none).
    pub model: Model,
    pub checkpoint: ModelCheckpoint,
    pub loss_curve: Vec<LossPoint>,
    pub steps_run: usize,
    pub stopped_early: bool,
    /// Set when a non-finite loss or forward value ended training.
    pub aborted: Option<String>,
}

/// CSV with header `step,loss,validation_loss,wall_ms`.
pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("step,loss,validation_loss,wall_ms\n");
    for p in curve {
        let v = p.validation_loss.map_or(String::new(), |v| v.to_string());
        out.push_str(&format!("{},{},{},{:.3}\n", p.step, p.loss, v, p.wall_ms));
    }
    out
}

/// Adam with the usual decay constants.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..p.data.len() {
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g.data[i];
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g.data[i] * g.data[i];
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Loss and parameter gradients of one sample.
fn sample_grad(model: &Model, prep: &PreparedInstance) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let out = model.unroll(&mut tape, &bound, prep)?;
    let loss = mlu_on_target(&mut tape, prep, out.ratios)?;
    let grads = tape.backward(loss)?;
    let g = bound
        .vars()
        .into_iter()
        .map(|v| grads.get(v).cloned().expect("every parameter gets an adjoint"))
        .collect();
    Ok((tape.value(loss).item(), g))
}

/// Final-iteration MLU on the target demands, without gradients.
pub fn sample_loss(model: &Model, prep: &PreparedInstance) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let out = model.unroll(&mut tape, &bound, prep)?;
    let loss = mlu_on_target(&mut tape, prep, out.ratios)?;
    Ok(tape.value(loss).item())
}

/// Mean loss and gradient over a batch, reduced in batch order.
pub fn batch_grad(model: &Model, batch: &[&PreparedInstance]) -> Result<(f64, Vec<Tensor>)> {
    let per_sample: Vec<Result<(f64, Vec<Tensor>)>> = batch.par_iter().map(|p| sample_grad(model, p)).collect();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut total: Option<Vec<Tensor>> = None;
    for r in per_sample {
        let (l, g) = r?;
        loss += l * scale;
        match &mut total {
            None => total = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    let mut grads = total.unwrap_or_default();
    for g in &mut grads {
        g.data.iter_mut().for_each(|x| *x *= scale);
    }
    Ok((loss, grads))
}

/// Samples for snapshots `range` of a trace on one topology.
pub fn samples_from_trace(
    topology: &Arc<Topology>,
    pathset: &Arc<PathSet>,
    trace: &TrafficTrace,
    range: std::ops::Range<usize>,
    mode: UncertaintyMode,
    window: usize,
) -> Result<Vec<Sample>> {
    range
        .filter(|&t| t >= mode.first_index(window))
        .map(|t| {
            Ok(Sample {
                topology: Arc::clone(topology),
                pathset: Arc::clone(pathset),
                input: mode.input(trace, t, window)?,
                target: trace.get(t).clone(),
            })
        })
        .collect()
}

/// Chronological split of a trace into training, validation and test
/// snapshot ranges.
pub fn split_ranges(len: usize, config: &TrainConfig) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
    let train_end = ((len as f64) * config.train_fraction).floor() as usize;
    let n_val = ((train_end as f64) * config.validation_fraction).floor() as usize;
    let fit_end = train_end - n_val;
    (0..fit_end, fit_end..train_end, train_end..len)
}

/// Trains on one topology and trace with the chronological split from the
/// config.
pub fn train(topology: &Topology, pathset: &PathSet, trace: &TrafficTrace, config: &TrainConfig) -> Result<TrainOutcome> {
    let spec = PartitionSpec::round_robin(pathset.num_pairs().max(1), 1)?;
    train_partitioned(topology, pathset, trace, &spec, GroupMode::AllGroups, config)
}

/// Like [`train`], but every sample is restricted to one group of pairs. With
/// a single group this is exactly [`train`].
pub fn train_partitioned(
    topology: &Topology,
    pathset: &PathSet,
    trace: &TrafficTrace,
    spec: &PartitionSpec,
    mode: GroupMode,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate(pathset.num_pairs())?;
    if let GroupMode::OneGroup(g) = mode {
        if g >= spec.s {
            return Err(Error::Config(format!("group {g} out of range for {} groups", spec.s)));
        }
    }
    let (fit, val, _) = split_ranges(trace.len(), config);
    let topo = Arc::new(topology.clone());
    let full = Arc::new(pathset.clone());
    let fit_samples = samples_from_trace(&topo, &full, trace, fit, config.uncertainty_mode, config.window)?;
    let val_samples = samples_from_trace(&topo, &full, trace, val, config.uncertainty_mode, config.window)?;
    if fit_samples.len() < config.batch_size {
        return Err(Error::Config(format!(
            "{} training snapshots for batch size {}",
            fit_samples.len(),
            config.batch_size
        )));
    }
    let groups: Vec<Arc<PathSet>> = if spec.s == 1 {
        vec![full]
    } else {
        spec.groups.iter().map(|g| Arc::new(pathset.select_pairs(g))).collect()
    };
    let descriptor = format!(
        "{} nodes, {} edges, {} pairs",
        topology.num_nodes(),
        topology.num_edges(),
        pathset.num_pairs()
    );
    train_on_samples(&fit_samples, &val_samples, &groups, mode, config, descriptor)
}

/// Core loop over explicit samples. Each sample is scored on one of
/// `groups` (path sets over the sample topology's pairs); a single group
/// means no partitioning.
pub fn train_on_samples(
    fit: &[Sample],
    validation: &[Sample],
    groups: &[Arc<PathSet>],
    mode: GroupMode,
    config: &TrainConfig,
    source_topology: String,
) -> Result<TrainOutcome> {
    config.validate()?;
    if fit.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_loop(fit, validation, groups, mode, config, source_topology))
}

fn prepare_sample(model: &Model, s: &Sample, pathset: &PathSet) -> Result<PreparedInstance> {
    PreparedInstance::with_target(&s.topology, pathset, &s.input, &s.target, model.config().feature_scaling)
}

fn run_loop(
    fit: &[Sample],
    validation: &[Sample],
    groups: &[Arc<PathSet>],
    mode: GroupMode,
    config: &TrainConfig,
    source_topology: String,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::new(config.model.clone(), rng.random())?;
    let shapes: Vec<(usize, usize)> = model.named_params().iter().map(|(_, t)| t.shape()).collect();
    let mut adam = Adam::new(config.learning_rate, &shapes);

    // prepared[g][i]: sample i restricted to group g
    let prepared: Vec<Vec<PreparedInstance>> = groups
        .iter()
        .map(|ps| fit.iter().map(|s| prepare_sample(&model, s, ps)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let val_prepared: Vec<PreparedInstance> = validation
        .iter()
        .map(|s| prepare_sample(&model, s, &s.pathset))
        .collect::<Result<_>>()?;
    let validate = |m: &Model| -> Result<f64> {
        let losses: Vec<Result<f64>> = val_prepared.par_iter().map(|p| sample_loss(m, p)).collect();
        let mut sum = 0.0;
        for l in losses {
            sum += l?;
        }
        Ok(sum / val_prepared.len() as f64)
    };

    let mut curve = Vec::with_capacity(config.steps);
    let mut best = (model.clone(), 0usize, None::<f64>);
    if !val_prepared.is_empty() {
        best.2 = Some(validate(&model)?);
    }
    let mut stopped_early = false;
    let mut aborted = None;
    let mut steps_run = 0;
    for step in 1..=config.steps {
        let started = Instant::now();
        let batch: Vec<&PreparedInstance> = (0..config.batch_size)
            .map(|_| {
                let i = rng.random_range(0..fit.len());
                let g = match mode {
                    _ if groups.len() == 1 => 0,
                    GroupMode::AllGroups => rng.random_range(0..groups.len()),
                    GroupMode::OneGroup(g) => g,
                };
                &prepared[g][i]
            })
            .collect();
        let (loss, mut grads) = match batch_grad(&model, &batch) {
            Ok((l, _)) if !l.is_finite() => {
                aborted = Some(format!("non-finite loss {l} at step {step}"));
                break;
            }
            Ok(r) => r,
            Err(e @ (Error::Numerical(_) | Error::Tape(TapeError::NonFinite { .. }))) => {
                aborted = Some(format!("step {step}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if grads.iter().any(|g| !g.is_finite()) {
            aborted = Some(format!("non-finite gradient at step {step}"));
            break;
        }
        if let Some(clip) = config.grad_clip {
            let norm = grads.iter().flat_map(|g| &g.data).map(|x| x * x).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|x| *x *= s));
            }
        }
        let previous = model.clone();
        adam.step(model.params_mut(), &grads);
        if model.named_params().iter().any(|(_, t)| !t.is_finite()) {
            model = previous;
            aborted = Some(format!("non-finite parameters after step {step}"));
            break;
        }
        steps_run = step;
        let mut validation_loss = None;
        if !val_prepared.is_empty() && step % config.eval_every == 0 {
            let v = match validate(&model) {
                Ok(v) if v.is_finite() => v,
                _ => {
                    aborted = Some(format!("non-finite validation loss at step {step}"));
                    break;
                }
            };
            validation_loss = Some(v);
            if best.2.is_none_or(|b| v < b) {
                best = (model.clone(), step, Some(v));
            } else if step - best.1 >= config.patience {
                stopped_early = true;
            }
        }
        curve.push(LossPoint {
            step,
            loss,
            validation_loss,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if stopped_early {
            break;
        }
    }
    let (final_model, best_step, best_loss) = if val_prepared.is_empty() {
        (model, steps_run, None)
    } else {
        best
    };
    let meta = TrainingMeta {
        seed: config.seed,
        steps: steps_run,
        source_topology,
        best_step,
        best_validation_loss: best_loss,
    };
    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint::from_model(&final_model, meta),
        model: final_model,
        loss_curve: curve,
        steps_run,
        stopped_early,
        aborted,
    })
}
