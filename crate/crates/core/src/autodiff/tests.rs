use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct nested-loop valid convolution.
fn conv_oracle(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Vec<f64> {
    let (seq, cin) = (x.shape()[0], x.shape()[1]);
    let (ws, cout) = (w.shape()[0], w.shape()[2]);
    let out_seq = (seq - ws) / stride + 1;
    let mut out = vec![0.0; out_seq * cout];
    for p in 0..out_seq {
        for o in 0..cout {
            let mut s = b.data()[o];
            for k in 0..ws {
                for c in 0..cin {
                    s += x.data()[(p * stride + k) * cin + c] * w.data()[(k * cin + c) * cout + o];
                }
            }
            out[p * cout + o] = s;
        }
    }
    out
}

#[test]
fn sparse_embed_one_hot_selects_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let table = rand_tensor(&mut rng, vec![6, 3]);
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let e = tape.leaf(table.clone());
    let inputs = vec![SparseVector::new(6, vec![(4, 1.0)]).unwrap()];
    let y = tape.sparse_embed(inputs, e).unwrap();
    assert_eq!(tape.value(y).data(), table.row(4));
}

#[test]
fn sparse_embed_matches_dense_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let table = rand_tensor(&mut rng, vec![5, 4]);
    let sv = SparseVector::new(5, vec![(1, 1.0), (3, 2.0)]).unwrap();
    // densify and multiply
    let dense = sv.to_dense();
    let mut expected = vec![0.0; 4];
    for (j, &v) in dense.iter().enumerate() {
        for c in 0..4 {
            expected[c] += v * table.data()[j * 4 + c];
        }
    }
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let e = tape.leaf(table);
    let y = tape.sparse_embed(vec![sv], e).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn sparse_embed_padding_contributes_bitwise_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut params = ParameterStore::new();
    let e = params
        .register_sparse("e", rand_tensor(&mut rng, vec![8, 3]))
        .unwrap();
    let inputs = vec![
        SparseVector::new(8, vec![(2, 1.0)]).unwrap(),
        SparseVector::empty(8),
    ];
    let mut tape = Tape::new(&params);
    let ev = tape.param(e);
    let y = tape.sparse_embed(inputs, ev).unwrap();
    assert!(tape.value(y).row(1).iter().all(|&v| v.to_bits() == 0));
    let s = tape.sum(y);
    let grads = tape.backward(s).unwrap();
    match grads.params.get(e).unwrap() {
        ParamGrad::Rows { rows, .. } => {
            assert_eq!(rows.keys().copied().collect::<Vec<_>>(), vec![2]);
        }
        other => panic!("expected row gradient, got {other:?}"),
    }
    let dense = grads.params.dense(&params, e);
    for r in (0..8).filter(|&r| r != 2) {
        assert!(dense[r * 3..r * 3 + 3].iter().all(|v| v.to_bits() == 0));
    }
}

#[test]
fn sparse_embed_dimension_mismatch() {
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let e = tape.leaf(Tensor::zeros(vec![5, 2]));
    let err = tape
        .sparse_embed(vec![SparseVector::empty(6)], e)
        .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn conv1d_window_one_is_rowwise_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, vec![7, 3]);
    let w = rand_tensor(&mut rng, vec![1, 3, 4]);
    let b = rand_tensor(&mut rng, vec![4]);
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let (xv, wv, bv) = (
        tape.leaf(x.clone()),
        tape.leaf(w.clone()),
        tape.leaf(b.clone()),
    );
    let conv = tape.conv1d(xv, wv, bv, 1).unwrap();
    let w2 = tape.leaf(Tensor::matrix(3, 4, w.data().to_vec()).unwrap());
    let dense = tape.dense(xv, w2, bv).unwrap();
    for (a, b) in tape.value(conv).data().iter().zip(tape.value(dense).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv1d_zero_input_gives_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = rand_tensor(&mut rng, vec![2, 3, 2]);
    let b = Tensor::vector(vec![0.5, -0.25]);
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let xv = tape.leaf(Tensor::zeros(vec![5, 3]));
    let (wv, bv) = (tape.leaf(w), tape.leaf(b));
    let y = tape.conv1d(xv, wv, bv, 1).unwrap();
    for r in 0..4 {
        assert_eq!(tape.value(y).row(r), &[0.5, -0.25]);
    }
}

#[test]
fn conv1d_strided_matches_nested_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, vec![6, 2]);
    let w = rand_tensor(&mut rng, vec![3, 2, 4]);
    let b = rand_tensor(&mut rng, vec![4]);
    let expected = conv_oracle(&x, &w, &b, 2);
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let (xv, wv, bv) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
    let y = tape.conv1d(xv, wv, bv, 2).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 4]);
    for (a, b) in tape.value(y).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv1d_rejects_short_input() {
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let xv = tape.leaf(Tensor::zeros(vec![2, 1]));
    let wv = tape.leaf(Tensor::zeros(vec![3, 1, 1]));
    let bv = tape.leaf(Tensor::zeros(vec![1]));
    assert!(matches!(
        tape.conv1d(xv, wv, bv, 1),
        Err(Error::InputTooShort { len: 2, window: 3 })
    ));
}

#[test]
fn pooling_hand_values() {
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap());
    let mx = tape.pool(x, PoolKind::Max).unwrap();
    let av = tape.pool(x, PoolKind::Avg).unwrap();
    assert_eq!(tape.value(mx).data(), &[3.0, 5.0]);
    assert_eq!(tape.value(av).data(), &[2.0, 3.5]);

    let single = tape.leaf(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
    let a = tape.pool(single, PoolKind::Max).unwrap();
    let b = tape.pool(single, PoolKind::Avg).unwrap();
    assert_eq!(tape.value(a).data(), &[1.0, -2.0, 0.5]);
    assert_eq!(tape.value(b).data(), &[1.0, -2.0, 0.5]);

    let constant = tape.leaf(Tensor::matrix(3, 2, vec![0.7, -0.1, 0.7, -0.1, 0.7, -0.1]).unwrap());
    let a = tape.pool(constant, PoolKind::Max).unwrap();
    let b = tape.pool(constant, PoolKind::Avg).unwrap();
    for (x, y) in tape.value(a).data().iter().zip(tape.value(b).data()) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn pool_rejects_empty() {
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.leaf(Tensor::zeros(vec![0, 3]));
    assert!(tape.pool(x, PoolKind::Max).is_err());
}

#[test]
fn max_pool_gradient_on_single_row_per_column_with_lowest_tie() {
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.leaf(
        Tensor::matrix(3, 2, vec![1.0, 4.0, 2.0, 4.0, 2.0, 0.0])
            .unwrap()
            .with_grad(),
    );
    let p = tape.pool(x, PoolKind::Max).unwrap();
    let s = tape.sum(p);
    let g = tape.backward(s).unwrap();
    // column 0 ties between rows 1 and 2, column 1 between rows 0 and 1
    assert_eq!(g.wrt(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn elementwise_identities() {
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.leaf(Tensor::vector(vec![0.3, -1.2, 2.0]).with_grad());
    let ones = tape.leaf(Tensor::vector(vec![1.0; 3]));
    let h = tape.hadamard(x, ones).unwrap();
    assert_eq!(tape.value(h).data(), tape.value(x).data());

    let z = tape.leaf(Tensor::scalar(0.0).with_grad());
    let t = tape.tanh(z);
    assert_eq!(tape.value(t).data(), &[0.0]);
    let g = tape.backward(t).unwrap();
    assert_eq!(g.wrt(z).unwrap(), &[1.0]);

    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let b = tape.leaf(Tensor::vector(vec![4.0, 5.0, 6.0, 7.0, 8.0]));
    let c = tape.concat(&[a, b]).unwrap();
    assert_eq!(tape.value(c).shape(), &[8]);
    let s0 = tape.slice(c, 0, 3).unwrap();
    let s1 = tape.slice(c, 3, 5).unwrap();
    assert_eq!(tape.value(s0).data(), tape.value(a).data());
    assert_eq!(tape.value(s1).data(), tape.value(b).data());
}

#[test]
fn shape_mismatches_are_config_errors() {
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let b = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
    assert!(matches!(tape.hadamard(a, b), Err(Error::Config(_))));
    let w = tape.leaf(Tensor::zeros(vec![3, 2]));
    let bias = tape.leaf(Tensor::zeros(vec![2]));
    assert!(matches!(tape.dense(a, w, bias), Err(Error::Config(_))));
}

#[test]
fn backward_sum_gives_ones_and_zero_hadamard_gives_zero() {
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.leaf(Tensor::vector(vec![0.5, -2.0, 3.0]).with_grad());
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new(&params);
    let x = tape.leaf(Tensor::vector(vec![0.5, -2.0, 3.0]).with_grad());
    let zeros = tape.leaf(Tensor::zeros(vec![3]));
    let h = tape.hadamard(x, zeros).unwrap();
    let s = tape.sum(h);
    let g = tape.backward(s).unwrap();
    assert!(g.wrt(x).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_requires_scalar_loss() {
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_grad());
    assert!(tape.backward(x).is_err());
}

#[test]
fn unreachable_values_get_no_gradient() {
    let mut params = ParameterStore::new();
    let used = params
        .register("used", Tensor::vector(vec![1.0, 2.0]))
        .unwrap();
    let unused = params
        .register("unused", Tensor::vector(vec![3.0]))
        .unwrap();
    let mut tape = Tape::new(&params);
    let u = tape.param(used);
    let _ = tape.param(unused);
    let s = tape.sum(u);
    let g = tape.backward(s).unwrap();
    assert!(g.params.get(unused).is_none());
    assert_eq!(g.params.dense(&params, unused), vec![0.0]);
}

#[test]
fn gradient_accumulates_over_two_consumers() {
    // f(x) = sum(tanh(x) * x): compare with a duplicated-variable oracle where
    // the two uses are separate leaves and their gradients are summed.
    let x0 = Tensor::vector(vec![0.3, -0.7, 1.1]);
    let params = ParameterStore::new();
    let mut tape = Tape::new(&params);
    let x = tape.leaf(x0.clone().with_grad());
    let t = tape.tanh(x);
    let h = tape.hadamard(t, x).unwrap();
    let s = tape.sum(h);
    let shared = tape.backward(s).unwrap().wrt(x).unwrap().to_vec();

    let mut tape = Tape::new(&params);
    let xa = tape.leaf(x0.clone().with_grad());
    let xb = tape.leaf(x0.with_grad());
    let t = tape.tanh(xa);
    let h = tape.hadamard(t, xb).unwrap();
    let s = tape.sum(h);
    let g = tape.backward(s).unwrap();
    for i in 0..3 {
        let split = g.wrt(xa).unwrap()[i] + g.wrt(xb).unwrap()[i];
        assert!((shared[i] - split).abs() < 1e-15);
    }
}

#[test]
fn linear_program_checks_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = rand_tensor(&mut rng, vec![3, 2]);
    let b = rand_tensor(&mut rng, vec![2]);
    let x = rand_tensor(&mut rng, vec![4, 3]);
    let report = grad_check_inputs(
        &[x, w, b],
        |t, v| {
            let y = t.dense(v[0], v[1], v[2])?;
            Ok(t.sum(y))
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-10, "{report:?}");
}

#[test]
fn tanh_chain_depth_five() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, vec![6]);
    let report = grad_check_inputs(
        &[x],
        |t, v| {
            let mut y = v[0];
            for _ in 0..5 {
                let s = t.scale(y, 1.7);
                y = t.tanh(s);
            }
            Ok(t.sum(y))
        },
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

/// Every differentiable op over 100 randomized trials.
#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let seq = rng.random_range(3..7);
        let cin = rng.random_range(1..4);
        let cout = rng.random_range(1..4);
        let ws = rng.random_range(1..=3.min(seq));
        let stride = rng.random_range(1..=ws);
        let x = rand_tensor(&mut rng, vec![seq, cin]);
        let w = rand_tensor(&mut rng, vec![ws, cin, cout]);
        let b = rand_tensor(&mut rng, vec![cout]);
        let probe = rand_tensor(&mut rng, vec![cout]);
        let kind = if trial % 2 == 0 {
            PoolKind::Max
        } else {
            PoolKind::Avg
        };
        let r = grad_check_inputs(
            &[x, w, b, probe],
            |t, v| {
                let n = t.row_normalize(v[0]);
                let c = t.conv1d(n, v[1], v[2], stride)?;
                let a = t.tanh(c);
                let p = t.pool(a, kind)?;
                let h = t.hadamard(p, v[3])?;
                let sm = t.softmax(h);
                let cat = t.concat(&[sm, p])?;
                let sl = t.slice(cat, 1, cout)?;
                let st = t.stack(&[sl, sl])?;
                let sr = t.sum_rows(st);
                let sc = t.scale(sr, 0.5);
                let ad = t.add(sc, p)?;
                let mc = t.mul_const(ad, (0..cout).map(|i| i as f64 - 0.5).collect())?;
                Ok(t.sum(mc))
            },
            1e-5,
        )
        .unwrap();
        worst = worst.max(r.max_relative_error);

        // sparse embedding table + pairwise loss
        let table = rand_tensor(&mut rng, vec![5, 3]);
        let w1: f64 = rng.random_range(0.0..1.0);
        let inputs = vec![
            SparseVector::new(5, vec![(0, 1.0), (3, 2.0)]).unwrap(),
            SparseVector::empty(5),
            SparseVector::new(5, vec![(3, 1.0)]).unwrap(),
        ];
        let r = grad_check_inputs(
            &[table],
            |t, v| {
                let e = t.sparse_embed(inputs.clone(), v[0])?;
                let n = t.row_normalize(e);
                let s = t.sum_rows(n);
                let a = t.slice(s, 0, 1)?;
                let b = t.slice(s, 1, 1)?;
                t.pair_loss(a, b, w1, 1.0 - w1)
            },
            1e-5,
        )
        .unwrap();
        worst = worst.max(r.max_relative_error);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn parameter_gradcheck_covers_sparse_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut params = ParameterStore::new();
    let e = params
        .register_sparse("e", rand_tensor(&mut rng, vec![50, 4]))
        .unwrap();
    let w = params
        .register("w", rand_tensor(&mut rng, vec![4, 2]))
        .unwrap();
    let b = params
        .register("b", rand_tensor(&mut rng, vec![2]))
        .unwrap();
    let inputs = vec![
        SparseVector::new(50, vec![(7, 1.0), (21, 1.0)]).unwrap(),
        SparseVector::new(50, vec![(21, 2.0)]).unwrap(),
    ];
    let report = grad_check(
        &params,
        |t| {
            let ev = t.param(e);
            let x = t.sparse_embed(inputs.clone(), ev)?;
            let (wv, bv) = (t.param(w), t.param(b));
            let y = t.dense(x, wv, bv)?;
            let y = t.tanh(y);
            Ok(t.sum(y))
        },
        1e-5,
        3,
    )
    .unwrap();
    // 2 touched rows + 3 untouched rows of width 4, plus w and b
    assert_eq!(report.coordinates_checked, 5 * 4 + 8 + 2);
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

#[test]
fn pair_probability_is_stable() {
    assert_eq!(pair_probability(0.3, 0.3), 0.5);
    assert!((pair_probability(3f64.ln(), 0.0) - 0.75).abs() < 1e-15);
    assert_eq!(pair_probability(1000.0, 0.0), 1.0);
    assert_eq!(pair_probability(0.0, 1000.0), 0.0);
}
