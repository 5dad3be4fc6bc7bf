use std::sync::Arc;

use super::*;
use crate::sparse::Incidence;

const FD_STEP: f64 = 1e-6;

/// Central finite difference of `f` with respect to every entry of `x0`.
fn fd_grad(x0: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    (0..x0.len())
        .map(|i| {
            let mut hi = x0.clone();
            let mut lo = x0.clone();
            hi.data[i] += FD_STEP;
            lo.data[i] -= FD_STEP;
            (f(&hi) - f(&lo)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let scale = 1.0_f64.max(x.abs()).max(y.abs());
        assert!((x - y).abs() <= tol * scale, "entry {i}: {x} vs {y}");
    }
}

/// Reduces any node to a scalar through a fixed weighted sum so that every
/// output entry contributes a distinct adjoint.
fn weighted_sum(tape: &mut Tape, v: Var) -> Var {
    let t = tape.value(v).clone();
    let w: Vec<f64> = (0..t.len()).map(|i| 0.3 + 0.17 * i as f64).collect();
    let wv = tape.constant(Tensor::new(t.rows, t.cols, w));
    let prod = tape.mul(v, wv).unwrap();
    let cols = tape.sum_rows(prod).unwrap();
    let ones = tape.constant(Tensor::filled(t.cols, 1, 1.0));
    let zero = tape.constant(Tensor::scalar(0.0));
    tape.affine(cols, ones, zero).unwrap()
}

/// Checks the analytic gradient of a one-input function against finite
/// differences.
fn check_unary(x0: Tensor, build: impl Fn(&mut Tape, Var) -> Var) {
    let eval = |x: &Tensor| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = build(&mut tape, xv);
        let l = weighted_sum(&mut tape, y);
        tape.value(l).item()
    };
    let mut tape = Tape::new();
    let xv = tape.param(x0.clone());
    let y = build(&mut tape, xv);
    let l = weighted_sum(&mut tape, y);
    let grads = tape.backward(l).unwrap();
    assert_close(&grads.get(xv).unwrap().data, &fd_grad(&x0, eval), 1e-6);
}

fn sample(rows: usize, cols: usize, seed: u64) -> Tensor {
    let data = (0..rows * cols)
        .map(|i| {
            let z = ((i as u64 + 1) * 2654435761 + seed * 40503) % 1000;
            z as f64 / 250.0 - 2.0
        })
        .collect();
    Tensor::new(rows, cols, data)
}

#[test]
fn softmin_known_values() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(1, 2, vec![0.0, 3.0_f64.ln()]));
    let y = tape.softmin_rows(x, 1.0).unwrap();
    assert_close(&tape.value(y).data, &[0.75, 0.25], 1e-12);
}

#[test]
fn softmin_shift_invariant_and_normalized() {
    let mut tape = Tape::new();
    let base = sample(3, 4, 1);
    let shifted = Tensor::new(3, 4, base.data.iter().map(|v| v + 123.0).collect());
    let a = tape.constant(base);
    let b = tape.constant(shifted);
    let ya = tape.softmin_rows(a, 0.7).unwrap();
    let yb = tape.softmin_rows(b, 0.7).unwrap();
    assert_close(&tape.value(ya).data, &tape.value(yb).data, 1e-12);
    for i in 0..3 {
        let s: f64 = tape.value(ya).row(i).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn softmin_large_inputs_stay_finite() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::column(vec![1e4, 1e4 + 1.0, 2e4]));
    let seg = Arc::new(Segments::new(vec![0, 3]));
    let y = tape.softmin_segments(x, &seg, 1.0).unwrap();
    assert!(tape.value(y).is_finite());
}

#[test]
fn masked_segments_zero_inactive_rows() {
    let seg = Arc::new(Segments::new(vec![0, 2, 4]).with_mask(vec![true, false, false, false]));
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::column(vec![1.0, 2.0, 3.0, 4.0]));
    let y = tape.softmin_segments(x, &seg, 1.0).unwrap();
    assert_eq!(tape.value(y).data, vec![1.0, 0.0, 0.0, 0.0]);
    let n = tape.normalize_segments(x, &seg).unwrap();
    assert_eq!(tape.value(n).data, vec![1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn gradient_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.param(sample(4, 3, 2));
    let s = tape.sum_rows(x).unwrap();
    let ones = tape.constant(Tensor::filled(3, 1, 1.0));
    let zero = tape.constant(Tensor::scalar(0.0));
    let l = tape.affine(s, ones, zero).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data, vec![1.0; 12]);
}

#[test]
fn constant_only_tape_has_no_gradients() {
    let mut tape = Tape::new();
    let x = tape.constant(sample(2, 2, 3));
    let m = tape.max_reduce(x).unwrap();
    assert!(tape.backward(m).unwrap().is_empty());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(sample(2, 2, 3));
    assert!(matches!(tape.backward(x), Err(TapeError::NotScalar { .. })));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::new();
    let a = tape.constant(sample(2, 2, 1));
    let b = tape.constant(sample(2, 3, 1));
    assert!(matches!(tape.add(a, b), Err(TapeError::Shape { op: "add", .. })));
}

#[test]
fn non_finite_output_names_node() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::scalar(1.0));
    let b = tape.constant(Tensor::scalar(0.0));
    assert_eq!(tape.div(a, b), Err(TapeError::NonFinite { node: 2, op: "div" }));
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let x0 = sample(5, 4, 7);
    let w1 = sample(4, 8, 11);
    let b1 = sample(1, 8, 13);
    let w2 = sample(8, 1, 17);
    let b2 = sample(1, 1, 19);
    let net = |tape: &mut Tape, ws: [Var; 4], x: Var| {
        let h = tape.affine(x, ws[0], ws[1]).unwrap();
        let h = tape.relu(h).unwrap();
        let o = tape.affine(h, ws[2], ws[3]).unwrap();
        weighted_sum(tape, o)
    };
    let params = [w1, b1, w2, b2];
    let mut tape = Tape::new();
    let x = tape.constant(x0.clone());
    let ws = params.clone().map(|p| tape.param(p));
    let l = net(&mut tape, ws, x);
    let grads = tape.backward(l).unwrap();
    for k in 0..4 {
        let eval = |p: &Tensor| {
            let mut t = Tape::new();
            let x = t.constant(x0.clone());
            let mut vals = params.clone();
            vals[k] = p.clone();
            let ws = vals.map(|v| t.constant(v));
            let l = net(&mut t, ws, x);
            t.value(l).item()
        };
        assert_close(&grads.get(ws[k]).unwrap().data, &fd_grad(&params[k], eval), 1e-6);
    }
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let other = Tensor::new(2, 3, vec![1.5, -0.7, 2.0, 0.9, 1.1, -1.3]);
    let o = other.clone();
    check_unary(sample(2, 3, 5), move |t, x| {
        let c = t.constant(o.clone());
        let a = t.mul(x, c).unwrap();
        let b = t.sub(a, x).unwrap();
        let d = t.add(b, x).unwrap();
        let e = t.div(d, c).unwrap();
        let f = t.div(c, e).unwrap();
        t.scale(f, -0.5).unwrap()
    });
}

#[test]
fn softmin_gradients_match_finite_differences() {
    check_unary(sample(3, 4, 9), |t, x| t.softmin_rows(x, 0.8).unwrap());
    let seg = Arc::new(Segments::new(vec![0, 2, 5, 6]).with_mask(vec![true, true, true, false, true, true]));
    check_unary(sample(6, 1, 4), move |t, x| t.softmin_segments(x, &seg, 1.3).unwrap());
}

#[test]
fn structural_ops_match_finite_differences() {
    check_unary(sample(3, 2, 6), |t, x| {
        let y = t.scale(x, 2.0).unwrap();
        t.concat_cols(&[x, y, x]).unwrap()
    });
    check_unary(sample(1, 3, 6), |t, x| t.repeat_rows(x, 4).unwrap());
    check_unary(sample(4, 3, 8), |t, x| t.max_reduce(x).unwrap());
    check_unary(sample(4, 1, 8), |t, x| t.relu(x).unwrap());
}

#[test]
fn sparse_ops_match_finite_differences() {
    let mat = Arc::new(Incidence::from_rows(&[vec![0, 2], vec![1], vec![0, 1, 3], vec![]], 4));
    let m = Arc::clone(&mat);
    check_unary(sample(4, 2, 3), move |t, x| t.sparse_matmul(&m, false, x).unwrap());
    let m = Arc::clone(&mat);
    check_unary(sample(4, 2, 3), move |t, x| t.sparse_matmul(&m, true, x).unwrap());
    let m = Arc::clone(&mat);
    check_unary(sample(4, 1, 12), move |t, x| t.row_max(&m, x).unwrap().0);
}

#[test]
fn normalize_segments_matches_finite_differences() {
    let seg = Arc::new(Segments::new(vec![0, 3, 5]));
    let x0 = Tensor::column(vec![0.5, 1.5, 2.0, 0.3, 0.9]);
    check_unary(x0, move |t, x| t.normalize_segments(x, &seg).unwrap());
}

#[test]
fn normalize_resets_empty_groups_to_uniform() {
    let seg = Arc::new(Segments::new(vec![0, 2, 5]));
    let mut tape = Tape::new();
    let x = tape.param(Tensor::column(vec![0.0, 0.0, 1.0, 1.0, 2.0]));
    let y = tape.normalize_segments(x, &seg).unwrap();
    assert_close(&tape.value(y).data, &[0.5, 0.5, 0.25, 0.25, 0.5], 1e-12);
    let l = weighted_sum(&mut tape, y);
    let g = tape.backward(l).unwrap();
    assert_eq!(&g.get(x).unwrap().data[..2], &[0.0, 0.0]);
}

#[test]
fn fan_out_accumulates_adjoints() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    let z = tape.add(y, x).unwrap();
    let g = tape.backward(z).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 7.0);
}
