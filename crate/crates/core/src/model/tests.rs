use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::network::fixtures::{triangle, triangle_demand, triangle_paths};
use crate::network::tests::random_instance;
use crate::network::{edge_flows, mlu_of};
use crate::pathgen::shuffle_paths_with_permutation;

fn small_config(operator: Operator, iterations: usize) -> ModelConfig {
    ModelConfig {
        operator,
        iterations,
        mlp1_layers: vec![2, 8, 1],
        mlp2_layers: vec![4, 8, 1],
        ..ModelConfig::default()
    }
}

/// Edge model whose initialization network returns its first input (the
/// scaled demand) and whose update network is identically zero.
fn stub_model(iterations: usize) -> Model {
    let config = ModelConfig {
        iterations,
        mlp1_layers: vec![2, 1],
        mlp2_layers: vec![4, 1],
        ..ModelConfig::default()
    };
    let mlp1 = Mlp {
        layers: vec![Layer {
            weight: Tensor::new(2, 1, vec![1.0, 0.0]),
            bias: Tensor::zeros(1, 1),
        }],
    };
    Model::from_parts(config, Some(mlp1), Mlp::zeros(&[4, 1])).unwrap()
}

fn assert_simplex(split: &SplitConfig, ps: &PathSet, skip: &[usize]) {
    split.validate(ps, 1e-9, skip).unwrap();
}

#[test]
fn load_scaling_makes_routing_scale_free() {
    let (t, ps, d) = random_instance(4, 7, 3);
    let model = Model::new(ModelConfig::default(), 2).unwrap();
    let base = model.route(&t, &ps, &d).unwrap();
    let prep = model.prepare(&t, &ps, &d).unwrap();
    let uniform = SplitConfig::uniform(&ps);
    let u = mlu_of(&uniform, &d, &ps, &t).unwrap();
    assert!((prep.load() * prep.scale() - u * t.max_capacity()).abs() < 1e-9 * u.max(1.0) * t.max_capacity());
    for alpha in [1e-3, 0.5, 7.0] {
        let scaled = model.route(&t, &ps, &d.scaled(alpha)).unwrap();
        for (a, b) in base.split.ratios.iter().zip(&scaled.split.ratios) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in base.trace.iter().zip(&scaled.trace) {
            assert!((a.mlu * alpha - b.mlu).abs() < 1e-9 * b.mlu.max(1.0));
        }
    }
    let plain = Model::new(
        ModelConfig {
            feature_scaling: FeatureScaling::MaxCapacity,
            ..ModelConfig::default()
        },
        2,
    )
    .unwrap();
    assert_eq!(plain.prepare(&t, &ps, &d).unwrap().load(), 1.0);
}

#[test]
fn identity_initializer_accumulates_demand() {
    let (t, ps, d) = random_instance(3, 6, 3);
    let model = stub_model(0);
    let prep = model.prepare(&t, &ps, &d).unwrap();
    let lambda = model.init_dual(&prep).unwrap();
    let pd = ps.path_demands(&d);
    let mut want = vec![0.0; t.num_edges()];
    for p in 0..ps.num_paths() {
        for &e in ps.path(p) {
            want[e] += pd[p];
        }
    }
    for (got, want) in lambda.iter().zip(&want) {
        assert!((got * prep.scale() * prep.load() - want).abs() < 1e-9 * want.max(1.0));
    }
    let zero = model.prepare(&t, &ps, &DemandMatrix::zeros(6)).unwrap();
    assert!(model.init_dual(&zero).unwrap().iter().all(|&l| l == 0.0));
}

#[test]
fn one_model_runs_on_topologies_of_different_size() {
    let model = Model::new(ModelConfig::default(), 1).unwrap();
    for (seed, n) in [(1, 5), (2, 9)] {
        let (t, ps, d) = random_instance(seed, n, 3);
        let prep = model.prepare(&t, &ps, &d).unwrap();
        assert_eq!(model.init_dual(&prep).unwrap().len(), t.num_edges());
        let routing = model.route(&t, &ps, &d).unwrap();
        assert_simplex(&routing.split, &ps, &[]);
        assert_eq!(routing.trace.len(), 6);
    }
}

#[test]
fn zero_update_is_a_fixed_point() {
    let (t, ps, d) = random_instance(4, 6, 3);
    let model = stub_model(3);
    let prep = model.prepare(&t, &ps, &d).unwrap();
    let lambda: Vec<f64> = (0..t.num_edges()).map(|e| 0.1 * e as f64).collect();
    let step = model.dual_update_step(&prep, &lambda).unwrap();
    assert_eq!(step.duals, lambda);
    let again = model.dual_update_step(&prep, &lambda).unwrap();
    assert_eq!(step, again);
    let routing = model.route(&t, &ps, &d).unwrap();
    let first = &routing.trace[0];
    assert!(routing.trace.iter().all(|e| e.mlu == first.mlu && e.duals == first.duals));
}

#[test]
fn zero_duals_split_triangle_evenly() {
    let t = triangle();
    let ps = triangle_paths(&t);
    let model = stub_model(1);
    let prep = model.prepare(&t, &ps, &triangle_demand(10.0)).unwrap();
    let step = model.dual_update_step(&prep, &[0.0; 3]).unwrap();
    assert_eq!(step.split.ratios, vec![0.5, 0.5]);
    assert!((step.mlu - 0.5).abs() < 1e-12);
}

#[test]
fn no_updates_route_by_initial_duals() {
    let (t, ps, d) = random_instance(5, 6, 3);
    let model = Model::new(small_config(Operator::Edge, 0), 3).unwrap();
    let prep = model.prepare(&t, &ps, &d).unwrap();
    let lambda = model.init_dual(&prep).unwrap();
    let routing = model.route(&t, &ps, &d).unwrap();
    let want = ratios_from_duals(&t, &ps, &lambda, 1.0).unwrap();
    assert_eq!(routing.split, want);
    assert_eq!(routing.trace.len(), 1);
}

#[test]
fn outputs_are_simplex_valid_for_random_weights() {
    for seed in 0..10 {
        let (t, ps, d) = random_instance(seed, 4 + seed as usize % 5, 4);
        for op in [Operator::Edge, Operator::Path] {
            let model = Model::new(small_config(op, 4), seed).unwrap();
            let routing = model.route(&t, &ps, &d).unwrap();
            assert_simplex(&routing.split, &ps, &[]);
            let m = mlu_of(&routing.split, &d, &ps, &t).unwrap();
            let last = routing.trace.last().unwrap().mlu;
            assert!((m - last).abs() < 1e-9 * m.max(1.0));
        }
    }
}

#[test]
fn path_operator_with_zero_network_stays_uniform() {
    let (t, ps, d) = random_instance(8, 6, 3);
    let config = ModelConfig {
        operator: Operator::Path,
        mlp2_layers: vec![4, 1],
        ..ModelConfig::default()
    };
    let model = Model::from_parts(config, None, Mlp::zeros(&[4, 1])).unwrap();
    let routing = model.route(&t, &ps, &d).unwrap();
    let uniform = SplitConfig::uniform(&ps);
    for (a, b) in routing.split.ratios.iter().zip(&uniform.ratios) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_path_pairs_keep_full_ratio() {
    let (t, ps, d) = random_instance(9, 6, 1);
    for op in [Operator::Edge, Operator::Path] {
        let model = Model::new(small_config(op, 3), 2).unwrap();
        let routing = model.route(&t, &ps, &d).unwrap();
        assert!(routing.split.ratios.iter().all(|&r| (r - 1.0).abs() < 1e-12));
    }
}

#[test]
fn failed_paths_are_masked() {
    let t = triangle();
    let ps = triangle_paths(&t);
    let d = triangle_demand(10.0);
    let model = Model::new(small_config(Operator::Edge, 3), 1).unwrap();

    let (same, origin) = mask_failed_paths(&ps, &t);
    assert_eq!(same, ps);
    assert_eq!(origin, vec![0, 1]);

    let failed = t.with_failed_edges(&[0]).unwrap();
    let routing = model.route(&failed, &ps, &d).unwrap();
    assert_eq!(routing.split.ratios, vec![0.0, 1.0]);
    assert!(routing.dead_pairs.is_empty());
    let (survivors, origin) = mask_failed_paths(&ps, &failed);
    assert_eq!(origin, vec![1]);
    assert_eq!(survivors.num_paths(), 1);

    let both = t.with_failed_edges(&[0, 2]).unwrap();
    for op in [Operator::Edge, Operator::Path] {
        let model = Model::new(small_config(op, 3), 1).unwrap();
        let routing = model.route(&both, &ps, &d).unwrap();
        assert_eq!(routing.dead_pairs, vec![0]);
        assert_eq!(routing.split.ratios, vec![0.0, 0.0]);
        let fs = edge_flows(&both, &ps, &d, &routing.split).unwrap();
        assert_eq!(fs.mlu, 0.0);
    }
    let (none, _) = mask_failed_paths(&ps, &both);
    assert_eq!(none.disconnected(), &[(0, 1)]);
}

#[test]
fn failed_edges_never_carry_flow() {
    for seed in 0..8 {
        let (t, ps, d) = random_instance(seed, 7, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let failed: Vec<usize> = (0..3).map(|_| rng.random_range(0..t.num_edges())).collect();
        let tf = t.with_failed_edges(&failed).unwrap();
        for op in [Operator::Edge, Operator::Path] {
            let model = Model::new(small_config(op, 3), seed).unwrap();
            let routing = model.route(&tf, &ps, &d).unwrap();
            let fs = edge_flows(&tf, &ps, &d, &routing.split).unwrap();
            for &e in &failed {
                assert_eq!(fs.edge_flows[e], 0.0);
            }
            assert!(fs.mlu.is_finite());
        }
    }
}

#[test]
fn sweep_shapes_and_zero_surface() {
    let model = stub_model(2);
    let grid = SweepGrid {
        capacity: 0.5,
        mlu: 0.8,
        util_range: (0.0, 1.0),
        util_steps: 50,
        lambda_range: (-1.0, 1.0),
        lambda_steps: 50,
    };
    let pts = model.mlp2_response_sweep(&grid).unwrap();
    assert_eq!(pts.len(), 2500);
    assert!(pts.iter().all(|p| p.delta == 0.0));
    let csv = sweep_to_csv(&pts);
    assert_eq!(csv.lines().count(), 2501);
    assert_eq!(csv.lines().next().unwrap(), "util_ratio,lambda,delta_lambda");
}

#[test]
fn sweep_grid_follows_trace() {
    let (t, ps, d) = random_instance(2, 6, 3);
    let model = Model::new(ModelConfig::default(), 4).unwrap();
    let prep = model.prepare(&t, &ps, &d).unwrap();
    let routing = model.route_prepared(&prep).unwrap();
    let grid = SweepGrid::from_trace(&prep, &routing.trace, 7).unwrap();
    let all: Vec<f64> = routing.trace.iter().flat_map(|e| e.duals.clone()).collect();
    assert!(all.iter().all(|&l| l >= grid.lambda_range.0 && l <= grid.lambda_range.1));
    assert_eq!(model.mlp2_response_sweep(&grid).unwrap().len(), 49);
}

/// Relative error used by the gradient checks.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central-difference check of `∂mlu/∂θ` for every parameter of `model` on
/// one instance. Returns the largest relative error over coordinates whose
/// perturbation does not cross a kink of the max.
fn full_gradient_error(model: &Model, prep: &PreparedInstance) -> f64 {
    let loss = |m: &Model| {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let out = m.unroll(&mut tape, &bound, prep).unwrap();
        let l = mlu_on_target(&mut tape, prep, out.ratios).unwrap();
        tape.value(l).item()
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let out = model.unroll(&mut tape, &bound, prep).unwrap();
    let l = mlu_on_target(&mut tape, prep, out.ratios).unwrap();
    let grads = tape.backward(l).unwrap();
    let vars = bound.vars();
    let mut worst: f64 = 0.0;
    let n_params = model.named_params().len();
    for k in 0..n_params {
        let g = grads.get(vars[k]).unwrap().clone();
        for i in 0..g.len() {
            let base = model.named_params()[k].1.data[i];
            let h = 1e-5 * base.abs().max(1.0);
            let eval_at = |v: f64| {
                let mut m = model.clone();
                m.params_mut()[k].data[i] = v;
                loss(&m)
            };
            let (hi, lo, mid) = (eval_at(base + h), eval_at(base - h), loss(model));
            // one-sided slopes disagreeing means the step straddles a kink
            let (right, left) = ((hi - mid) / h, (mid - lo) / h);
            if rel_err(right, left) > 1e-2 && (right - left).abs() > 1e-6 {
                continue;
            }
            let fd = (hi - lo) / (2.0 * h);
            if fd.abs() < 1e-7 && g.data[i].abs() < 1e-7 {
                continue;
            }
            worst = worst.max(rel_err(g.data[i], fd));
        }
    }
    worst
}

#[test]
fn full_forward_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (t, ps, d) = random_instance(seed + 20, 5, 3);
        for op in [Operator::Edge, Operator::Path] {
            let model = Model::new(small_config(op, 3), seed).unwrap();
            let prep = model.prepare(&t, &ps, &d).unwrap();
            let err = full_gradient_error(&model, &prep);
            assert!(err < 1e-3, "seed {seed} {op:?}: rel err {err}");
        }
    }
}

#[test]
fn path_order_does_not_change_mlu() {
    for seed in 0..5 {
        let (t, ps, d) = random_instance(seed, 7, 4);
        let (shuffled, _) = shuffle_paths_with_permutation(&ps, seed + 1);
        for op in [Operator::Edge, Operator::Path] {
            let model = Model::new(small_config(op, 4), seed).unwrap();
            let a = model.route(&t, &ps, &d).unwrap();
            let b = model.route(&t, &shuffled, &d).unwrap();
            let ma = mlu_of(&a.split, &d, &ps, &t).unwrap();
            let mb = mlu_of(&b.split, &d, &shuffled, &t).unwrap();
            assert!((ma - mb).abs() < 1e-9, "seed {seed} {op:?}: {ma} vs {mb}");
        }
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    for op in [Operator::Edge, Operator::Path] {
        let model = Model::new(small_config(op, 2), 7).unwrap();
        let meta = TrainingMeta {
            seed: 7,
            steps: 12,
            source_topology: "test".into(),
            ..TrainingMeta::default()
        };
        let ckpt = ModelCheckpoint::from_model(&model, meta);
        let text = ckpt.to_json();
        let back = ModelCheckpoint::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back.to_model().unwrap(), model);
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let model = Model::new(small_config(Operator::Edge, 2), 7).unwrap();
    let ckpt = ModelCheckpoint::from_model(&model, TrainingMeta::default());

    let mut bad = ckpt.clone();
    let blob = bad.weights.get_mut("mlp2.0.bias").unwrap();
    *blob = blob.replace('A', "B");
    if *blob == ckpt.weights["mlp2.0.bias"] {
        blob.replace_range(0..1, if blob.starts_with('Q') { "R" } else { "Q" });
    }
    let err = ModelCheckpoint::from_json(&bad.to_json()).unwrap_err();
    assert!(err.to_string().contains("checksum"), "{err}");

    let mut old = ckpt.clone();
    old.version = 0;
    let err = ModelCheckpoint::from_json(&old.to_json()).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
}

#[test]
fn checkpoint_with_wrong_shapes_is_rejected() {
    let model = Model::new(small_config(Operator::Edge, 2), 7).unwrap();
    let mut ckpt = ModelCheckpoint::from_model(&model, TrainingMeta::default());
    ckpt.config.mlp2_layers = vec![4, 9, 1];
    ckpt.checksum = ckpt.compute_checksum();
    assert!(matches!(ckpt.to_model(), Err(Error::Checkpoint(_))));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ModelConfig {
            mlp1_layers: vec![3, 8, 1],
            ..ModelConfig::default()
        },
        ModelConfig {
            mlp2_layers: vec![4, 8, 2],
            ..ModelConfig::default()
        },
        ModelConfig {
            temperature: 0.0,
            ..ModelConfig::default()
        },
    ];
    for c in bad {
        assert!(matches!(Model::new(c, 0), Err(Error::Config(_))));
    }
}

#[test]
fn parameter_count_depends_only_on_config() {
    let model = Model::new(ModelConfig::default(), 0).unwrap();
    assert_eq!(model.num_params(), (2 * 64 + 64) + (64 * 64 + 64) + (64 + 1) + (4 * 64 + 64) + (64 + 1));
}
