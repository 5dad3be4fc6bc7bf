use proptest::prelude::*;

use super::*;
use crate::model::ModelConfig;
use crate::network::fixtures::{triangle, triangle_demand, triangle_paths};
use crate::network::tests::random_instance;
use crate::pathgen::compute_pathset;
use crate::topogen::{random_topology, TopologyConfig};
use crate::traffic::{generate_trace, TraceConfig, TrafficTrace};

fn samples_for(seed: u64, n: usize, count: usize) -> Vec<Sample> {
    let (t, ps, _) = random_instance(seed, n, 3);
    let trace = generate_trace(
        &t,
        &TraceConfig {
            snapshots: count,
            total_demand: 30.0,
            sigma: 0.5,
            seed,
        },
    )
    .unwrap();
    let (t, ps) = (Arc::new(t), Arc::new(ps));
    trace
        .snapshots()
        .iter()
        .map(|d| Sample::exact(Arc::clone(&t), Arc::clone(&ps), d.clone()))
        .collect()
}

fn triangle_sample(v: f64) -> Sample {
    let t = triangle();
    let ps = triangle_paths(&t);
    Sample::exact(Arc::new(t), Arc::new(ps), triangle_demand(v))
}

#[test]
fn oracle_router_scores_one() {
    let samples = samples_for(1, 6, 8);
    let report = evaluate(&OracleRouter, &samples, &EvalOptions::default(), &OracleCache::new()).unwrap();
    assert_eq!(report.samples.len(), 8);
    for s in &report.samples {
        assert!((s.normalized_mlu - 1.0).abs() < 1e-6, "{}", s.normalized_mlu);
    }
}

#[test]
fn uniform_is_optimal_on_symmetric_triangle() {
    let report = evaluate(
        &UniformRouter,
        &[triangle_sample(10.0)],
        &EvalOptions::default(),
        &OracleCache::new(),
    )
    .unwrap();
    let s = &report.samples[0];
    assert!((s.optimal_mlu - 0.5).abs() < 1e-9);
    assert!((s.normalized_mlu - 1.0).abs() < 1e-9);
}

/// Nearest-rank style reference: interpolate between the two order
/// statistics bracketing `q/100 · (n-1)` using plain loops.
fn naive_percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
            }
        }
    }
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let below = rank as usize;
    if below + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let frac = rank - below as f64;
    v[below] * (1.0 - frac) + v[below + 1] * frac
}

proptest! {
    #[test]
    fn percentiles_match_sorting_reference(values in prop::collection::vec(-100.0f64..100.0, 1..60)) {
        let s = Summary::of(&values);
        for (q, got) in [(25.0, s.p25), (50.0, s.p50), (75.0, s.p75), (99.0, s.p99)] {
            let want = naive_percentile(&values, q);
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!((s.mean - mean).abs() < 1e-9);
    }
}

#[test]
fn normalized_values_never_beat_the_oracle() {
    let samples = samples_for(2, 7, 6);
    let model = Model::new(ModelConfig::default(), 3).unwrap();
    let cache = OracleCache::new();
    for router in [&model as &dyn Router, &UniformRouter] {
        let report = evaluate(router, &samples, &EvalOptions::default(), &cache).unwrap();
        assert!(report.samples.iter().all(|s| s.normalized_mlu >= NORMALIZED_FLOOR));
    }
    assert_eq!(cache.len(), 6);
}

#[test]
fn reports_do_not_depend_on_jobs() {
    let samples = samples_for(3, 6, 10);
    let model = Model::new(ModelConfig::default(), 3).unwrap();
    let a = evaluate(&model, &samples, &EvalOptions::default(), &OracleCache::new()).unwrap();
    let b = evaluate(
        &model,
        &samples,
        &EvalOptions {
            jobs: 4,
            ..EvalOptions::default()
        },
        &OracleCache::new(),
    )
    .unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn zero_failures_equal_plain_evaluation() {
    let samples = samples_for(4, 6, 5);
    let model = Model::new(ModelConfig::default(), 5).unwrap();
    let opts = EvalOptions::default();
    let plain = evaluate(&model, &samples, &opts, &OracleCache::new()).unwrap();
    let failed = failure_eval(&model, &samples, 0, 9, &opts, &OracleCache::new()).unwrap();
    assert_eq!(plain, failed);
}

#[test]
fn forced_routing_after_failure_is_optimal() {
    // failing A->C leaves only the direct path for A->B
    let t = triangle();
    let ps = triangle_paths(&t);
    let tf = Arc::new(t.with_failed_edges(&[1]).unwrap());
    let sample = Sample::exact(tf, Arc::new(ps), triangle_demand(10.0));
    let model = Model::new(ModelConfig::default(), 1).unwrap();
    let report = evaluate(&model, &[sample], &EvalOptions::default(), &OracleCache::new()).unwrap();
    let s = &report.samples[0];
    assert!((s.mlu - 1.0).abs() < 1e-12);
    assert!((s.normalized_mlu - 1.0).abs() < 1e-12);
    assert_eq!(s.failed_edge_flow, 0.0);
}

#[test]
fn failure_sets_are_reproducible_and_avoided() {
    let samples = samples_for(5, 7, 6);
    let a = failure_samples(&samples, 3, 17).unwrap();
    let b = failure_samples(&samples, 3, 17).unwrap();
    let sets_a: Vec<_> = a.iter().map(|(_, f)| f.clone()).collect();
    let sets_b: Vec<_> = b.iter().map(|(_, f)| f.clone()).collect();
    assert_eq!(sets_a, sets_b);
    assert!(sets_a.iter().all(|f| f.len() == 3 && f.windows(2).all(|w| w[0] < w[1])));
    let model = Model::new(ModelConfig::default(), 2).unwrap();
    let report = failure_eval(&model, &samples, 3, 17, &EvalOptions::default(), &OracleCache::new()).unwrap();
    assert!(report.samples.iter().all(|s| s.failed_edge_flow == 0.0));
    assert!(report.samples.iter().all(|s| s.normalized_mlu >= NORMALIZED_FLOOR));
    assert!(failure_samples(&samples, 100, 1).is_err());
}

#[test]
fn dead_pairs_are_flagged_and_excluded() {
    let t = triangle();
    let ps = triangle_paths(&t);
    let tf = Arc::new(t.with_failed_edges(&[0, 2]).unwrap());
    let sample = Sample::exact(tf, Arc::new(ps), triangle_demand(10.0));
    let report = evaluate(&UniformRouter, &[sample], &EvalOptions::default(), &OracleCache::new()).unwrap();
    assert_eq!(report.infeasible_pairs, 1);
    assert_eq!(report.samples[0].normalized_mlu, 1.0);
}

#[test]
fn transfer_to_same_topology_matches_evaluate() {
    let samples = samples_for(6, 6, 4);
    let model = Model::new(ModelConfig::default(), 8).unwrap();
    let opts = EvalOptions::default();
    let plain = evaluate_model(&model, &samples, &opts, &OracleCache::new()).unwrap();
    let transfer = transfer_eval(&model, "A", "A", &samples, &opts, &OracleCache::new()).unwrap();
    assert_eq!(plain.samples, transfer.samples);
    assert_eq!(transfer.label, "A -> A");
    let other = samples_for(7, 9, 3);
    let report = transfer_eval(&model, "A", "B", &other, &opts, &OracleCache::new()).unwrap();
    assert_eq!(report.samples.len(), 3);
    assert_eq!(report.shapes[0].num_nodes, 9);
}

#[test]
fn trace_dump_has_one_row_per_iteration() {
    let samples = samples_for(8, 6, 1);
    let model = Model::new(ModelConfig::default(), 4).unwrap();
    let s = &samples[0];
    let rows = dump_trace(&model, &s.topology, &s.pathset, &s.target).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.2 >= NORMALIZED_FLOOR));
    let csv = trace_to_csv(&rows);
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn timing_is_opt_in() {
    let samples = samples_for(9, 5, 2);
    let quiet = evaluate(&UniformRouter, &samples, &EvalOptions::default(), &OracleCache::new()).unwrap();
    assert!(quiet.samples.iter().all(|s| s.wall_ms.is_none()));
    assert!(!quiet.to_json().contains("wall_ms"));
    let timed = evaluate(
        &UniformRouter,
        &samples,
        &EvalOptions {
            timing: true,
            ..EvalOptions::default()
        },
        &OracleCache::new(),
    )
    .unwrap();
    assert!(timed.samples.iter().all(|s| s.wall_ms.is_some()));
}

fn base_case(seed: u64) -> (Topology, TrafficTrace) {
    let t = random_topology(
        &TopologyConfig {
            nodes: 8,
            links: 12,
            capacities: vec![10.0, 20.0],
        },
        seed,
    )
    .unwrap();
    let trace = generate_trace(
        &t,
        &TraceConfig {
            snapshots: 12,
            total_demand: 50.0,
            sigma: 0.5,
            seed,
        },
    )
    .unwrap();
    (t, trace)
}

#[test]
fn zero_edit_clusters_equal_base() {
    let (t, trace) = base_case(1);
    let config = ClusterConfig {
        n_clusters: 3,
        snapshots_per_cluster: 4,
        node_edit_fraction: 0.0,
        link_edits: 0,
        capacity_change_prob: 0.0,
        ..ClusterConfig::default()
    };
    let sc = gen_dynamic_cluster(&t, &trace, &config, 5).unwrap();
    assert_eq!(sc.snapshots.len(), 12);
    assert!(sc.variation_log.is_empty());
    let ps = compute_pathset(&t, config.k).unwrap();
    for s in &sc.snapshots {
        assert_eq!(*s.topology, t);
        assert_eq!(*s.pathset, ps);
        assert_eq!(&s.demands, trace.get(s.base_index));
    }
}

#[test]
fn clusters_are_valid_and_new_pairs_get_demand() {
    let (t, trace) = base_case(2);
    let config = ClusterConfig {
        n_clusters: 6,
        snapshots_per_cluster: 3,
        node_edit_fraction: 0.25,
        ..ClusterConfig::default()
    };
    let sc = gen_dynamic_cluster(&t, &trace, &config, 11).unwrap();
    let mut saw_new = false;
    for s in &sc.snapshots {
        assert!(s.topology.is_strongly_connected());
        assert!(s.topology.capacities().iter().all(|&c| c > 0.0));
        assert!(s.pathset.disconnected().is_empty());
        assert_eq!(s.pathset.num_pairs(), s.topology.num_nodes() * (s.topology.num_nodes() - 1));
        for (i, name) in s.topology.nodes().iter().enumerate() {
            if t.node_index(name).is_none() {
                saw_new = true;
                let out: f64 = (0..s.topology.num_nodes()).filter(|&j| j != i).map(|j| s.demands.get(i, j)).sum();
                assert!(out > 0.0);
            }
        }
        let sol = solve_mlu_lp(&s.topology, &s.pathset, &s.demands).unwrap();
        assert!(sol.is_optimal());
    }
    assert!(saw_new, "no node was added across {} clusters", config.n_clusters);
    let again = gen_dynamic_cluster(&t, &trace, &config, 11).unwrap();
    assert_eq!(sc.variation_log, again.variation_log);
}

#[test]
fn cluster_file_round_trips() {
    let (t, trace) = base_case(3);
    let config = ClusterConfig {
        n_clusters: 3,
        snapshots_per_cluster: 2,
        ..ClusterConfig::default()
    };
    let sc = gen_dynamic_cluster(&t, &trace, &config, 4).unwrap();
    let file = sc.to_file();
    assert_eq!(file.pathsets.len(), 3);
    let json = serde_json::to_string(&file).unwrap();
    let back = ScenarioCluster::from_file(serde_json::from_str(&json).unwrap()).unwrap();
    assert_eq!(back.snapshots.len(), sc.snapshots.len());
    for (a, b) in back.snapshots.iter().zip(&sc.snapshots) {
        assert_eq!(a.topology, b.topology);
        assert_eq!(a.pathset, b.pathset);
        assert_eq!(a.demands, b.demands);
        assert_eq!((a.cluster, a.base_index), (b.cluster, b.base_index));
    }
    assert_eq!(back.to_file(), file);
}
