use claimattn::tensor::{grad_check, layer_norm_rows, matmul, softmax_rows, Activation, NodeId, Tape, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Reduces a matrix node to a scalar with fixed random weights so that every
/// output entry gets a distinct gradient.
fn project(tape: &mut Tape<'_>, x: NodeId, seed: u64) -> claimattn::tensor::Result<NodeId> {
    let [r, c] = tape.value(x).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, r, c));
    let m = tape.mul(x, w)?;
    tape.sum(m)
}

const TOL: f64 = 1e-6;

#[test]
fn matmul_examples() {
    let b = Tensor::from_rows(&[[3.0, 4.0], [5.0, 6.0]]);
    assert_eq!(matmul(&Tensor::eye(2), &b).unwrap(), b);
    let c = matmul(&Tensor::from_rows(&[[1.0, 2.0]]), &Tensor::column(&[3.0, 4.0])).unwrap();
    assert_eq!(c.data(), &[11.0]);
    let z = matmul(&Tensor::zeros(2, 3), &Tensor::filled(3, 2, 7.0)).unwrap();
    assert_eq!(z, Tensor::zeros(2, 2));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let err = matmul(&Tensor::zeros(2, 3), &Tensor::zeros(2, 3)).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, TensorError::Shape { .. }));
    assert!(msg.contains("2×3") || msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn matmul_is_associative() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (a, b, c) = (random(&mut rng, 4, 4), random(&mut rng, 4, 4), random(&mut rng, 4, 4));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-9);
    }
}

#[test]
fn activation_examples() {
    let x = Tensor::row_vector(&[-1.0, 0.0, 2.0]);
    let mut tape = Tape::new();
    let n = tape.param(&x);
    let r = tape.activate(n, Activation::Relu).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

    let s = Tensor::row_vector(&[0.0, 3f64.ln()]);
    let n = tape.param(&s);
    let y = tape.sigmoid(n).unwrap();
    assert_eq!(tape.value(y).data()[0], 0.5);
    assert!((tape.value(y).data()[1] - 0.75).abs() < 1e-15);
}

#[test]
fn relu_gradient_at_zero_is_zero() {
    let x = Tensor::row_vector(&[0.0, 1.0]);
    let mut tape = Tape::new();
    let n = tape.param(&x);
    let r = tape.relu(n).unwrap();
    let s = tape.sum(r).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(n).unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn softmax_examples() {
    let u = softmax_rows(&Tensor::row_vector(&[2.5, 2.5, 2.5]));
    for v in u.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    assert_eq!(softmax_rows(&Tensor::scalar(-40.0)).data(), &[1.0]);
    let p = softmax_rows(&Tensor::row_vector(&[0.0, 2f64.ln()]));
    assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((p.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    // large inputs stay finite thanks to max subtraction
    let big = softmax_rows(&Tensor::row_vector(&[1000.0, 999.0]));
    assert!(big.is_finite());
}

#[test]
fn layer_norm_examples() {
    let g = Tensor::filled(1, 3, 1.0);
    let b = Tensor::zeros(1, 3);
    let y = layer_norm_rows(&Tensor::row_vector(&[5.0, 5.0, 5.0]), &g, &b, 1e-5).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

    let y = layer_norm_rows(
        &Tensor::row_vector(&[1.0, -1.0]),
        &Tensor::filled(1, 2, 1.0),
        &Tensor::zeros(1, 2),
        1e-12,
    )
    .unwrap();
    assert!((y.data()[0] - 1.0).abs() < 1e-9 && (y.data()[1] + 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_rows_are_standardized_and_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, 6, 7);
    let g = Tensor::filled(1, 7, 1.0);
    let b = Tensor::zeros(1, 7);
    let y = layer_norm_rows(&x, &g, &b, 1e-10).unwrap();
    for r in 0..6 {
        let row = y.row(r);
        let mean = row.iter().sum::<f64>() / 7.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
    let mut shifted = x.clone();
    shifted.data_mut().iter_mut().for_each(|v| *v += 3.25);
    let ys = layer_norm_rows(&shifted, &g, &b, 1e-10).unwrap();
    assert!(ys.max_abs_diff(&y) < 1e-9);
}

#[test]
fn gather_examples_and_errors() {
    let e = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    let mut tape = Tape::new();
    let n = tape.param(&e);
    let g = tape.gather_rows(n, &[0]).unwrap();
    assert_eq!(tape.value(g).data(), &[1.0, 2.0]);
    let g = tape.gather_rows(n, &[2, 0]).unwrap();
    assert_eq!(tape.value(g).data(), &[5.0, 6.0, 1.0, 2.0]);
    match tape.gather_rows(n, &[1, 3]) {
        Err(TensorError::Index { position, index, bound, .. }) => {
            assert_eq!((position, index, bound), (1, 3, 3));
        }
        other => panic!("expected index error, got {other:?}"),
    }
}

#[test]
fn gather_accumulates_repeated_rows() {
    let e = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
    let mut tape = Tape::new();
    let n = tape.param(&e);
    let g = tape.gather_rows(n, &[1, 1]).unwrap();
    let w = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [10.0, 20.0]]));
    let m = tape.mul(g, w).unwrap();
    let s = tape.sum(m).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(n).unwrap().data(), &[0.0, 0.0, 11.0, 22.0]);

    let err = grad_check(&[e], 1e-5, |t, p| {
        let g = t.gather_rows(p[0], &[1, 1, 0])?;
        let sq = t.mul(g, g)?;
        project(t, sq, 3)
    })
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn backward_examples() {
    let x = Tensor::scalar(3.0);
    let unused = Tensor::row_vector(&[1.0, 2.0]);
    let mut tape = Tape::new();
    let n = tape.param(&x);
    let u = tape.param(&unused);
    let sq = tape.mul(n, n).unwrap();
    tape.backward(sq).unwrap();
    assert_eq!(tape.grad(n).unwrap().data(), &[6.0]);
    assert_eq!(tape.grad_or_zeros(u), Tensor::zeros(1, 2));
    // a second call resets rather than accumulates
    tape.backward(sq).unwrap();
    assert_eq!(tape.grad(n).unwrap().data(), &[6.0]);
}

#[test]
fn backward_of_linear_sum_is_outer_structure() {
    // loss = Σ (W x) ⇒ ∂loss/∂W[i][j] = x[j]
    let w = Tensor::from_rows(&[[1.0, -2.0, 0.5], [0.3, 0.2, 0.1]]);
    let x = Tensor::column(&[2.0, -1.0, 4.0]);
    let mut tape = Tape::new();
    let wn = tape.param(&w);
    let xn = tape.constant(x);
    let y = tape.matmul(wn, xn).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(wn).unwrap().data(), &[2.0, -1.0, 4.0, 2.0, -1.0, 4.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let x = Tensor::row_vector(&[1.0, 2.0]);
    let mut tape = Tape::new();
    let n = tape.param(&x);
    assert!(matches!(tape.backward(n), Err(TensorError::NotScalar { .. })));
}

#[test]
fn non_finite_values_are_rejected() {
    assert!(Tensor::new(1, 2, vec![1.0, f64::NAN]).is_err());
    assert!(Tensor::new(1, 2, vec![1.0]).is_err());
    let x = Tensor::scalar(1e300);
    let mut tape = Tape::new();
    let n = tape.param(&x);
    assert!(matches!(tape.mul(n, n), Err(TensorError::NonFinite { .. })));
}

#[test]
fn grad_check_oracle_examples() {
    let theta = Tensor::row_vector(&[0.3, -1.2, 2.0]);
    let quad = grad_check(std::slice::from_ref(&theta), 1e-5, |t, p| {
        let sq = t.mul(p[0], p[0])?;
        project(t, sq, 1)
    })
    .unwrap();
    assert!(quad < 1e-6, "{quad}");
    let lin = grad_check(&[theta], 1e-5, |t, p| project(t, p[0], 2)).unwrap();
    assert!(lin < 1e-9, "{lin}");
}

#[test]
fn every_op_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let a = random(&mut rng, 6, 4);
    let b = random(&mut rng, 4, 3);
    let row = random(&mut rng, 1, 4);
    let col = random(&mut rng, 6, 1);
    let g = random(&mut rng, 1, 4);
    let p = Tensor::new(6, 1, (0..6).map(|i| 0.1 + 0.13 * i as f64).collect()).unwrap();
    let eps = 1e-5;

    type Case = (&'static str, Vec<Tensor>, Box<dyn for<'t> Fn(&mut Tape<'t>, &[NodeId]) -> claimattn::tensor::Result<NodeId>>);
    let cases: Vec<Case> = vec![
        ("matmul", vec![a.clone(), b.clone()], Box::new(|t, p| {
            let y = t.matmul(p[0], p[1])?;
            project(t, y, 1)
        })),
        ("transpose", vec![a.clone()], Box::new(|t, p| {
            let y = t.transpose(p[0])?;
            project(t, y, 2)
        })),
        ("add_mul_scale", vec![a.clone(), a.clone()], Box::new(|t, p| {
            let y = t.add(p[0], p[1])?;
            let y = t.mul(y, p[0])?;
            let y = t.scale(y, -1.7)?;
            project(t, y, 3)
        })),
        ("add_row", vec![a.clone(), row.clone()], Box::new(|t, p| {
            let y = t.add_row(p[0], p[1])?;
            project(t, y, 4)
        })),
        ("sigmoid", vec![a.clone()], Box::new(|t, p| {
            let y = t.sigmoid(p[0])?;
            project(t, y, 5)
        })),
        ("relu", vec![a.clone()], Box::new(|t, p| {
            let y = t.relu(p[0])?;
            project(t, y, 6)
        })),
        ("softmax", vec![a.clone()], Box::new(|t, p| {
            let y = t.softmax_rows(p[0])?;
            project(t, y, 7)
        })),
        ("layer_norm", vec![a.clone(), g.clone(), row.clone()], Box::new(|t, p| {
            let y = t.layer_norm(p[0], p[1], p[2], 1e-5)?;
            project(t, y, 8)
        })),
        ("concat", vec![a.clone(), col.clone()], Box::new(|t, p| {
            let y = t.concat_cols(&[p[0], p[1], p[0]])?;
            project(t, y, 9)
        })),
        ("mul_col", vec![a.clone(), col.clone()], Box::new(|t, p| {
            let y = t.mul_col(p[0], p[1])?;
            project(t, y, 10)
        })),
        ("segment_sum", vec![a.clone()], Box::new(|t, p| {
            let y = t.segment_sum(p[0], 3)?;
            project(t, y, 11)
        })),
        ("shift_rows", vec![a.clone()], Box::new(|t, p| {
            let up = t.shift_rows(p[0], 1, 3)?;
            let down = t.shift_rows(p[0], -2, 3)?;
            let y = t.add(up, down)?;
            project(t, y, 12)
        })),
        ("block_attention", vec![a.clone(), a.clone(), a.clone()], Box::new(|t, p| {
            let s = t.block_scores(p[0], p[1], 3)?;
            let s = t.softmax_rows(s)?;
            let y = t.block_mix(s, p[2], 3)?;
            project(t, y, 13)
        })),
        ("weighted_bce", vec![p.clone()], Box::new(|t, p| {
            t.weighted_bce(p[0], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0], &[0.5, 1.0, 2.0, 1.0, 3.0, 0.7])
        })),
    ];
    for (name, params, f) in cases {
        let err = grad_check(&params, eps, |t, p| f(t, p)).unwrap();
        assert!(err < TOL, "{name}: {err}");
    }
}

#[test]
fn unit_weights_give_plain_bce() {
    let p = Tensor::column(&[0.2, 0.7, 0.9]);
    let y = [0.0, 1.0, 1.0];
    let mut tape = Tape::new();
    let n = tape.param(&p);
    let l = tape.weighted_bce(n, &y, &[1.0; 3]).unwrap();
    let plain = -((0.8f64).ln() + (0.7f64).ln() + (0.9f64).ln()) / 3.0;
    assert_eq!(tape.value(l).data()[0], plain);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-15.0f64..15.0, 12)) {
        let s = softmax_rows(&Tensor::new(3, 4, data).unwrap());
        for r in 0..3 {
            let total: f64 = s.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(s.row(r).iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn transpose_is_an_involution(data in prop::collection::vec(-10.0f64..10.0, 15)) {
        let t = Tensor::new(3, 5, data).unwrap();
        prop_assert_eq!(t.transpose().transpose(), t);
    }
}
