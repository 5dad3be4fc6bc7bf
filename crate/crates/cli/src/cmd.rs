//! One function per subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, ValueEnum};
use dualte::eval::{
    dump_trace, evaluate, evaluate_model, failure_eval, gen_dynamic_cluster, trace_to_csv, transfer_eval, ClusterConfig,
    ClusterFile, EvalOptions, EvalReport, OracleCache, OracleRouter, Router, ScenarioCluster, UniformRouter,
};
use dualte::model::{sweep_to_csv, Model, SweepGrid};
use dualte::oracle::solve_mlu_lp;
use dualte::pathgen::{compute_pathset, shuffle_paths};
use dualte::topogen::{random_topology, TopologyConfig};
use dualte::traffic::{generate_trace, PartitionSpec, TraceConfig, UncertaintyMode};
use dualte::training::{loss_curve_csv, samples_from_trace, split_ranges, train_partitioned, GroupMode, Sample, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::io::{manifest_path, out_path, parse_json, read, CliResult, Failure, Run};

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

fn parse_mode(s: &str) -> Result<UncertaintyMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown mode `{s}` (expected off, movavg or linreg)"))
}

/// Half-open `a:b`; either end may be omitted.
fn parse_rows(s: &str) -> Result<(Option<usize>, Option<usize>), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("rows `{s}` must look like a:b"))?;
    let end = |x: &str| -> Result<Option<usize>, String> {
        if x.trim().is_empty() {
            Ok(None)
        } else {
            x.trim().parse().map(Some).map_err(|e| format!("rows `{s}`: {e}"))
        }
    };
    Ok((end(a)?, end(b)?))
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Failure::config(format!("--{flag} is required here")))
}

fn resolve_out(out: &Path) -> PathBuf {
    out_path(Path::new(""), out)
}

#[derive(Args, Serialize)]
pub struct GenTopo {
    /// Topology generator config JSON ({nodes, links, capacities}); overrides the size flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of nodes.
    #[arg(long, default_value_t = 8)]
    nodes: usize,
    /// Number of undirected links; each becomes two directed edges.
    #[arg(long, default_value_t = 12)]
    links: usize,
    /// Comma-separated capacity choices.
    #[arg(long, value_delimiter = ',', default_values_t = [10.0, 20.0, 40.0])]
    capacities: Vec<f64>,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output topology JSON.
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_topo(args: GenTopo) -> CliResult<()> {
    let config = match &args.config {
        Some(p) => parse_json(p, &read(p)?)?,
        None => TopologyConfig {
            nodes: args.nodes,
            links: args.links,
            capacities: args.capacities.clone(),
        },
    };
    let out = resolve_out(&args.out);
    let mut run = Run::new("gen-topo", &(&config, args.seed), manifest_path(Some(&out), "gen-topo"));
    run.seed("topology", args.seed);
    if let Some(p) = &args.config {
        run.read_input(p)?;
    }
    let topology = random_topology(&config, args.seed)?;
    run.output(out, json_bytes(&topology), true);
    run.finish()
}

#[derive(Args, Serialize)]
pub struct GenPaths {
    /// Topology JSON.
    #[arg(long)]
    topo: PathBuf,
    /// Paths per source-destination pair.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Shuffle path order within every pair with this seed.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Output path set JSON.
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_paths(args: GenPaths) -> CliResult<()> {
    let out = resolve_out(&args.out);
    let mut run = Run::new("gen-paths", &args, manifest_path(Some(&out), "gen-paths"));
    let topology = run.topology(&args.topo)?;
    let mut pathset = compute_pathset(&topology, args.k)?;
    if let Some(seed) = args.shuffle_seed {
        run.seed("shuffle", seed);
        pathset = shuffle_paths(&pathset, seed);
    }
    run.output(out, json_bytes(&pathset.to_file()), true);
    run.finish()
}

#[derive(Args, Serialize)]
pub struct GenTraffic {
    /// Topology JSON.
    #[arg(long)]
    topo: PathBuf,
    /// Trace config JSON ({snapshots, total_demand, sigma, seed}); overrides the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of snapshots.
    #[arg(long, default_value_t = 400)]
    snapshots: usize,
    /// Total demand of each snapshot.
    #[arg(long, default_value_t = 100.0)]
    total_demand: f64,
    /// Lognormal spread of the gravity masses.
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output demand CSV (one row-major snapshot per line).
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_traffic(args: GenTraffic) -> CliResult<()> {
    let config = match &args.config {
        Some(p) => parse_json(p, &read(p)?)?,
        None => TraceConfig {
            snapshots: args.snapshots,
            total_demand: args.total_demand,
            sigma: args.sigma,
            seed: args.seed,
        },
    };
    let out = resolve_out(&args.out);
    let mut run = Run::new("gen-traffic", &config, manifest_path(Some(&out), "gen-traffic"));
    run.seed("traffic", config.seed);
    if let Some(p) = &args.config {
        run.read_input(p)?;
    }
    let topology = run.topology(&args.topo)?;
    let trace = generate_trace(&topology, &config)?;
    run.output(out, trace.to_csv().into_bytes(), true);
    run.finish()
}

#[derive(Args, Serialize)]
pub struct Solve {
    /// Topology JSON.
    #[arg(long)]
    topo: PathBuf,
    /// Path set JSON.
    #[arg(long)]
    paths: PathBuf,
    /// Demand CSV.
    #[arg(long)]
    tm: PathBuf,
    /// Snapshot (line) of the demand CSV.
    #[arg(long, default_value_t = 0)]
    row: usize,
    /// Write the solution here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn solve(args: Solve) -> CliResult<()> {
    let out = args.out.as_deref().map(resolve_out);
    let mut run = Run::new("solve", &args, manifest_path(out.as_deref(), "solve"));
    let topology = run.topology(&args.topo)?;
    let pathset = run.pathset(&args.paths, &topology)?;
    let trace = run.trace(&args.tm)?;
    if args.row >= trace.len() {
        return Err(Failure::config(format!("row {} out of range for {} snapshots", args.row, trace.len())));
    }
    let sol = solve_mlu_lp(&topology, &pathset, trace.get(args.row))?;
    run.emit(out, json_bytes(&sol), true);
    run.finish()?;
    if sol.is_optimal() {
        Ok(())
    } else {
        Err(Failure::infeasible(format!("oracle status {:?}", sol.status)))
    }
}

/// Group partition of the pair list for partitioned training.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    /// Number of round-robin groups.
    pub groups: usize,
    #[serde(default = "all_groups")]
    pub mode: GroupMode,
}

fn all_groups() -> GroupMode {
    GroupMode::AllGroups
}

/// Training run file. Input paths are relative to the file; output paths
/// to the file as well unless `DUALTE_OUT_DIR` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub topology: PathBuf,
    pub paths: PathBuf,
    pub traffic: PathBuf,
    /// Checkpoint JSON.
    pub output: PathBuf,
    #[serde(default)]
    pub loss_curve: Option<PathBuf>,
    #[serde(default)]
    pub partition: Option<PartitionConfig>,
    #[serde(default)]
    pub train: TrainConfig,
}

impl TrainRun {
    fn load(path: &Path) -> CliResult<Self> {
        let mut run: Self = parse_json(path, &read(path)?)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut run.topology, &mut run.paths, &mut run.traffic] {
            *p = dir.join(&*p);
        }
        run.output = out_path(dir, &run.output);
        run.loss_curve = run.loss_curve.map(|p| out_path(dir, &p));
        Ok(run)
    }
}

#[derive(Args, Serialize)]
pub struct Train {
    /// Training run JSON: {topology, paths, traffic, output, loss_curve?, partition?, train}.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for per-sample passes; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

pub fn train(args: Train) -> CliResult<()> {
    let mut config = TrainRun::load(&args.config)?;
    if let Some(jobs) = args.jobs {
        config.train.jobs = jobs;
    }
    config.train.validate()?;
    // thread count never changes results, so it stays out of the manifest
    let mut echoed = config.clone();
    echoed.train.jobs = 1;
    let mut run = Run::new("train", &echoed, manifest_path(Some(&config.output), "train"));
    run.seed("train", config.train.seed);
    run.read_input(&args.config)?;
    let topology = run.topology(&config.topology)?;
    let pathset = run.pathset(&config.paths, &topology)?;
    let trace = run.trace(&config.traffic)?;
    let (groups, mode) = match &config.partition {
        Some(p) => (p.groups, p.mode),
        None => (1, GroupMode::AllGroups),
    };
    let spec = PartitionSpec::round_robin(pathset.num_pairs(), groups)?;
    let outcome = train_partitioned(&topology, &pathset, &trace, &spec, mode, &config.train)?;
    if let Some(reason) = &outcome.aborted {
        return Err(Failure::numerical(format!("training aborted: {reason}")));
    }
    run.output(config.output.clone(), outcome.checkpoint.to_json().into_bytes(), true);
    if let Some(p) = &config.loss_curve {
        run.output(p.clone(), loss_curve_csv(&outcome.loss_curve).into_bytes(), false);
    }
    run.finish()
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RouterKind {
    /// The learned operator from --checkpoint.
    Model,
    /// Equal split over surviving paths.
    Uniform,
    /// The LP optimum.
    Oracle,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Where evaluation samples come from. Without any source, the test split of
/// the training run recorded next to the checkpoint is used.
#[derive(Args, Serialize)]
pub struct Source {
    /// Training run JSON whose chronological test split is evaluated.
    #[arg(long, conflicts_with_all = ["topo", "paths", "tm", "cluster"])]
    config: Option<PathBuf>,
    /// Topology JSON.
    #[arg(long, requires_all = ["paths", "tm"])]
    topo: Option<PathBuf>,
    /// Path set JSON.
    #[arg(long, requires = "topo")]
    paths: Option<PathBuf>,
    /// Demand CSV.
    #[arg(long, requires = "topo")]
    tm: Option<PathBuf>,
    /// Snapshot rows `a:b` (half-open) of the demand CSV; default all.
    #[arg(long, value_parser = parse_rows, requires = "tm")]
    rows: Option<(Option<usize>, Option<usize>)>,
    /// Scenario cluster JSON from gen-cluster.
    #[arg(long, conflicts_with_all = ["topo", "paths", "tm"])]
    cluster: Option<PathBuf>,
    /// Operator input: off (actual demands), movavg or linreg.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<UncertaintyMode>,
    /// Predictor history window.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args, Serialize)]
pub struct Report {
    /// Model checkpoint JSON.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Routing scheme to score.
    #[arg(long, value_enum, default_value_t = RouterKind::Model)]
    router: RouterKind,
    /// Worker threads; reports do not depend on it.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    jobs: usize,
    /// Record per-sample inference time (the report then has no digest).
    #[arg(long)]
    timing: bool,
    /// Keep per-iteration MLU trajectories in the report.
    #[arg(long)]
    keep_traces: bool,
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Report {
    fn options(&self, label: String) -> EvalOptions {
        EvalOptions {
            label,
            jobs: self.jobs,
            timing: self.timing,
            keep_traces: self.keep_traces,
        }
    }

    fn render(&self, report: &EvalReport) -> Vec<u8> {
        match self.format {
            Format::Json => report.to_json().into_bytes(),
            Format::Csv => report.to_csv().into_bytes(),
        }
    }

    fn model(&self, run: &mut Run) -> CliResult<Option<Model>> {
        match self.router {
            RouterKind::Model => Ok(Some(run.model(require(&self.checkpoint, "checkpoint")?)?)),
            _ => Ok(None),
        }
    }
}

fn checkpoint_run(checkpoint: &Path) -> CliResult<TrainRun> {
    let path = manifest_path(Some(checkpoint), "train");
    let manifest: dualte::manifest::RunManifest = parse_json(&path, &read(&path)?)?;
    if manifest.command != "train" {
        return Err(Failure::config(format!("{}: not a training manifest", path.display())));
    }
    serde_json::from_value(manifest.config).map_err(|e| Failure::config(format!("{}: config: {e}", path.display())))
}

/// Loads samples and a label for the source.
fn samples(source: &Source, checkpoint: Option<&Path>, run: &mut Run) -> CliResult<(Vec<Sample>, String)> {
    let window = |default: usize| source.window.unwrap_or(default);
    if let Some(p) = &source.cluster {
        let bytes = run.read_input(p)?;
        let file: ClusterFile = parse_json(p, &bytes)?;
        let cluster = ScenarioCluster::from_file(file)?;
        if source.mode.is_some_and(|m| m != UncertaintyMode::Off) {
            return Err(Failure::config("cluster snapshots are evaluated on actual demands only"));
        }
        return Ok((cluster.samples(), p.display().to_string()));
    }
    if let Some(topo) = &source.topo {
        let topology = Arc::new(run.topology(topo)?);
        let pathset = Arc::new(run.pathset(require(&source.paths, "paths")?, &topology)?);
        let trace = run.trace(require(&source.tm, "tm")?)?;
        let (a, b) = source.rows.unwrap_or((None, None));
        let (a, b) = (a.unwrap_or(0), b.unwrap_or(trace.len()).min(trace.len()));
        if a >= b {
            return Err(Failure::config(format!("empty row range {a}:{b}")));
        }
        let mode = source.mode.unwrap_or(UncertaintyMode::Off);
        let samples = samples_from_trace(&topology, &pathset, &trace, a..b, mode, window(dualte::traffic::DEFAULT_WINDOW))?;
        return Ok((samples, topo.display().to_string()));
    }
    let config = match (&source.config, checkpoint) {
        (Some(p), _) => {
            run.read_input(p)?;
            TrainRun::load(p)?
        }
        (None, Some(c)) => checkpoint_run(c)?,
        (None, None) => {
            return Err(Failure::config(
                "no samples: give --config, --topo/--paths/--tm, --cluster or a --checkpoint with its training manifest",
            ))
        }
    };
    let topology = Arc::new(run.topology(&config.topology)?);
    let pathset = Arc::new(run.pathset(&config.paths, &topology)?);
    let trace = run.trace(&config.traffic)?;
    let (_, _, test) = split_ranges(trace.len(), &config.train);
    let mode = source.mode.unwrap_or(config.train.uncertainty_mode);
    let samples = samples_from_trace(&topology, &pathset, &trace, test, mode, window(config.train.window))?;
    Ok((samples, format!("{} (test split)", config.traffic.display())))
}

fn router_for(kind: RouterKind, model: Option<&Model>) -> &dyn Router {
    match (kind, model) {
        (RouterKind::Model, Some(m)) => m,
        (RouterKind::Oracle, _) => &OracleRouter,
        _ => &UniformRouter,
    }
}

#[derive(Args, Serialize)]
pub struct Eval {
    #[command(flatten)]
    report: Report,
    #[command(flatten)]
    source: Source,
}

fn report_run<C: Serialize>(command: &str, config: &C, report: &Report) -> (Run, Option<PathBuf>) {
    let out = report.out.as_deref().map(resolve_out);
    let run = Run::new(command, config, manifest_path(out.as_deref(), command));
    (run, out)
}

pub fn eval(args: Eval) -> CliResult<()> {
    let (mut run, out) = report_run("eval", &args, &args.report);
    let model = args.report.model(&mut run)?;
    let (samples, label) = samples(&args.source, args.report.checkpoint.as_deref(), &mut run)?;
    let cache = OracleCache::new();
    let options = args.report.options(label);
    let report = match &model {
        Some(m) => evaluate_model(m, &samples, &options, &cache)?,
        None => evaluate(router_for(args.report.router, None), &samples, &options, &cache)?,
    };
    run.emit(out, args.report.render(&report), !args.report.timing);
    run.finish()
}

#[derive(Args, Serialize)]
pub struct FailureEval {
    #[command(flatten)]
    report: Report,
    #[command(flatten)]
    source: Source,
    /// Edges failed per sample.
    #[arg(long)]
    failures: usize,
    /// Seed of the failure draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn failure(args: FailureEval) -> CliResult<()> {
    let (mut run, out) = report_run("failure-eval", &args, &args.report);
    run.seed("failures", args.seed);
    let model = args.report.model(&mut run)?;
    let (samples, label) = samples(&args.source, args.report.checkpoint.as_deref(), &mut run)?;
    let options = args.report.options(format!("{label}, {} failed edges", args.failures));
    let router = router_for(args.report.router, model.as_ref());
    let report = failure_eval(router, &samples, args.failures, args.seed, &options, &OracleCache::new())?;
    run.emit(out, args.report.render(&report), !args.report.timing);
    run.finish()
}

#[derive(Args, Serialize)]
pub struct TransferEval {
    #[command(flatten)]
    report: Report,
    #[command(flatten)]
    source: Source,
    /// Name of the training topology.
    #[arg(long, default_value = "source")]
    from: String,
    /// Name of the evaluation topology.
    #[arg(long, default_value = "target")]
    to: String,
}

pub fn transfer(args: TransferEval) -> CliResult<()> {
    let (mut run, out) = report_run("transfer-eval", &args, &args.report);
    let model = run.model(require(&args.report.checkpoint, "checkpoint")?)?;
    if args.source.config.is_none() && args.source.topo.is_none() && args.source.cluster.is_none() {
        return Err(Failure::config("transfer-eval needs target samples: --config, --topo/--paths/--tm or --cluster"));
    }
    let (samples, _) = samples(&args.source, None, &mut run)?;
    let options = args.report.options(String::new());
    let report = transfer_eval(&model, &args.from, &args.to, &samples, &options, &OracleCache::new())?;
    run.emit(out, args.report.render(&report), !args.report.timing);
    run.finish()
}

#[derive(Args, Serialize)]
pub struct GenCluster {
    /// Base topology JSON.
    #[arg(long)]
    topo: PathBuf,
    /// Base demand CSV the snapshots follow.
    #[arg(long)]
    tm: PathBuf,
    /// Cluster config JSON; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output cluster JSON.
    #[arg(long)]
    out: PathBuf,
}

pub fn gen_cluster(args: GenCluster) -> CliResult<()> {
    let config: ClusterConfig = match &args.config {
        Some(p) => parse_json(p, &read(p)?)?,
        None => ClusterConfig::default(),
    };
    let out = resolve_out(&args.out);
    let mut run = Run::new("gen-cluster", &(&config, args.seed), manifest_path(Some(&out), "gen-cluster"));
    run.seed("cluster", args.seed);
    if let Some(p) = &args.config {
        run.read_input(p)?;
    }
    let topology = run.topology(&args.topo)?;
    let trace = run.trace(&args.tm)?;
    let cluster = gen_dynamic_cluster(&topology, &trace, &config, args.seed)?;
    run.output(out, json_bytes(&cluster.to_file()), true);
    run.finish()
}

#[derive(Args, Serialize)]
pub struct Instance {
    /// Model checkpoint JSON.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Topology JSON.
    #[arg(long)]
    topo: PathBuf,
    /// Path set JSON.
    #[arg(long)]
    paths: PathBuf,
    /// Demand CSV.
    #[arg(long)]
    tm: PathBuf,
    /// Snapshot (line) of the demand CSV.
    #[arg(long, default_value_t = 0)]
    row: usize,
}

struct Loaded {
    model: Model,
    topology: dualte::network::Topology,
    pathset: dualte::network::PathSet,
    demands: dualte::network::DemandMatrix,
}

impl Instance {
    fn load(&self, run: &mut Run) -> CliResult<Loaded> {
        let model = run.model(&self.checkpoint)?;
        let topology = run.topology(&self.topo)?;
        let pathset = run.pathset(&self.paths, &topology)?;
        let trace = run.trace(&self.tm)?;
        if self.row >= trace.len() {
            return Err(Failure::config(format!("row {} out of range for {} snapshots", self.row, trace.len())));
        }
        Ok(Loaded {
            model,
            topology,
            pathset,
            demands: trace.get(self.row).clone(),
        })
    }
}

#[derive(Args, Serialize)]
pub struct Trace {
    #[command(flatten)]
    instance: Instance,
    /// Output CSV (iteration, mlu, normalized_mlu); standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn trace(args: Trace) -> CliResult<()> {
    let out = args.out.as_deref().map(resolve_out);
    let mut run = Run::new("trace", &args, manifest_path(out.as_deref(), "trace"));
    let l = args.instance.load(&mut run)?;
    let rows = dump_trace(&l.model, &l.topology, &l.pathset, &l.demands)?;
    run.emit(out, trace_to_csv(&rows).into_bytes(), true);
    run.finish()
}

#[derive(Args, Serialize)]
pub struct Sweep {
    #[command(flatten)]
    instance: Instance,
    /// Grid points per axis.
    #[arg(long, default_value_t = 21)]
    steps: usize,
    /// Output CSV (util_ratio, lambda, delta_lambda); standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn sweep(args: Sweep) -> CliResult<()> {
    let out = args.out.as_deref().map(resolve_out);
    let mut run = Run::new("sweep", &args, manifest_path(out.as_deref(), "sweep"));
    let l = args.instance.load(&mut run)?;
    let prep = l.model.prepare(&l.topology, &l.pathset, &l.demands)?;
    let routing = l.model.route_prepared(&prep)?;
    let grid = SweepGrid::from_trace(&prep, &routing.trace, args.steps)?;
    let points = l.model.mlp2_response_sweep(&grid)?;
    run.emit(out, sweep_to_csv(&points).into_bytes(), true);
    run.finish()
}
