use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

/// Reduces an arbitrary output to a scalar with fixed, non-uniform weights.
fn weighted_sum(t: &mut Tape, y: Var) -> crate::Result<Var> {
    let (r, c) = t.value(y).shape();
    let w = t.constant(Tensor::from_fn(r, c, |i, j| 0.3 + 0.7 * ((i * 7 + j * 3) % 5) as f64 / 4.0));
    let p = t.mul(y, w)?;
    t.sum(p)
}

/// 100 random points, FD step 1e-4, relative tolerance 1e-5.
fn check_primitive<F>(name: &str, shapes: &[(usize, usize)], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> crate::Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let mut done = 0;
    let mut attempts = 0;
    while done < 100 {
        attempts += 1;
        assert!(attempts < 1000, "{name}: could not find smooth points");
        let inputs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c)).collect();
        let report = grad_check(|t, v| {
            let y = f(t, v)?;
            weighted_sum(t, y)
        }, &inputs, 1e-4, 1e-5)
        .unwrap();
        if !report.smooth() {
            continue;
        }
        assert!(report.passed(), "{name}: {report:?}");
        done += 1;
    }
}

#[test]
fn primitive_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::row_vector(vec![0.0]));
    let s = t.sigmoid(x).unwrap();
    assert_eq!(t.value(s).item(), 0.5);
    let x = t.constant(Tensor::row_vector(vec![-2.0]));
    let l = t.leaky_relu(x, 0.5).unwrap();
    assert_eq!(t.value(l).item(), -1.0);
    let a = t.constant(Tensor::row_vector(vec![1.0, 0.0]));
    let c = t.cosine_similarity(a, a).unwrap();
    assert_eq!(t.value(c).item(), 1.0);
}

#[test]
fn backward_examples() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::row_vector(vec![3.0]), true);
    let sq = t.mul(x, x).unwrap();
    let loss = t.sum(sq).unwrap();
    t.backward(loss).unwrap();
    assert_eq!(t.grad(x).unwrap().item(), 6.0);

    let mut t = Tape::new();
    let a = t.constant(Tensor::row_vector(vec![1.0, -0.5, 2.0]));
    let ap = t.leaf(Tensor::row_vector(vec![0.5, 0.5, 0.0]), true);
    let loss = t.mse(a, ap).unwrap();
    t.backward(loss).unwrap();
    let g = t.grad(ap).unwrap();
    for j in 0..3 {
        let expected = 2.0 * (t.value(ap).get(0, j) - t.value(a).get(0, j)) / 3.0;
        assert!((g.get(0, j) - expected).abs() < 1e-15);
    }
}

#[test]
fn backward_errors() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::row_vector(vec![1.0, 2.0]), true);
    let y = t.scale(x, 2.0).unwrap();
    assert!(matches!(t.backward(y), Err(Error::NonScalarLoss { rows: 1, cols: 2 })));
    let loss = t.sum(y).unwrap();
    t.backward(loss).unwrap();
    assert!(matches!(t.backward(loss), Err(Error::BackwardTwice)));
    t.clear_grads();
    t.backward(loss).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn shape_and_numeric_errors() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(2, 3));
    let b = t.constant(Tensor::zeros(2, 3));
    assert!(matches!(t.matmul(a, b), Err(Error::Dimension { op: "matmul", .. })));
    let big = t.constant(Tensor::row_vector(vec![1e300]));
    let err = t.mul(big, big).unwrap_err();
    assert!(matches!(err, Error::NonFinite { op: "mul" }));
}

#[test]
fn constants_are_not_recorded() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::row_vector(vec![1.0]));
    let b = t.sigmoid(a).unwrap();
    assert!(!t.requires_grad(b));
    let p = t.leaf(Tensor::row_vector(vec![1.0]), true);
    let c = t.add(b, p).unwrap();
    assert!(t.requires_grad(c));
    let loss = t.sum(c).unwrap();
    t.backward(loss).unwrap();
    assert!(t.grad(a).is_none());
    assert_eq!(t.grad(p).unwrap().item(), 1.0);
}

#[test]
fn finite_difference_every_primitive() {
    check_primitive("matmul", &[(3, 4), (4, 2)], |t, v| t.matmul(v[0], v[1]));
    check_primitive("affine", &[(3, 4), (4, 2), (1, 2)], |t, v| t.affine(v[0], v[1], v[2]));
    check_primitive("add", &[(2, 3), (2, 3)], |t, v| t.add(v[0], v[1]));
    check_primitive("sub", &[(2, 3), (2, 3)], |t, v| t.sub(v[0], v[1]));
    check_primitive("mul", &[(2, 3), (2, 3)], |t, v| t.mul(v[0], v[1]));
    check_primitive("add_row", &[(3, 2), (1, 2)], |t, v| t.add_row(v[0], v[1]));
    check_primitive("mul_row", &[(3, 2), (1, 2)], |t, v| t.mul_row(v[0], v[1]));
    check_primitive("scale", &[(2, 2)], |t, v| t.scale(v[0], -1.7));
    check_primitive("sigmoid", &[(2, 3)], |t, v| t.sigmoid(v[0]));
    check_primitive("leaky_relu", &[(3, 3)], |t, v| t.leaky_relu(v[0], 0.5));
    check_primitive("relu", &[(3, 3)], |t, v| t.relu(v[0]));
    check_primitive("clamp", &[(3, 3)], |t, v| t.clamp(v[0], -1.0, 0.5));
    check_primitive("softmax_rows", &[(3, 4)], |t, v| t.softmax_rows(v[0]));
    check_primitive("sum", &[(2, 3)], |t, v| t.sum(v[0]));
    check_primitive("mean", &[(2, 3)], |t, v| t.mean(v[0]));
    check_primitive("mean_rows", &[(4, 3)], |t, v| t.mean_rows(v[0]));
    check_primitive("squared_l2", &[(3, 4)], |t, v| t.squared_l2(v[0]));
    check_primitive("cross_entropy", &[(4, 3)], |t, v| t.cross_entropy_rows(v[0], &[0, 2, 1, 2]));
    check_primitive("cosine", &[(3, 4), (3, 4)], |t, v| t.cosine_similarity(v[0], v[1]));
    check_primitive("concat_cols", &[(2, 3), (2, 2)], |t, v| t.concat_cols(v[0], v[1]));
    check_primitive("slice_cols", &[(2, 5)], |t, v| t.slice_cols(v[0], 1, 4));
    check_primitive("batch_norm_train", &[(5, 3), (1, 3), (1, 3)], |t, v| {
        Ok(t.batch_norm_train(v[0], v[1], v[2])?.0)
    });
    check_primitive("batch_norm_eval", &[(5, 3), (1, 3), (1, 3)], |t, v| {
        t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[1.0, 0.5, 2.0])
    });
    let mask = Tensor::from_fn(3, 4, |r, c| ((r + c) % 2) as f64);
    check_primitive("dropout", &[(3, 4)], move |t, v| t.dropout(v[0], &mask, 0.5, true));
}

#[test]
fn dropout_is_inverted_and_identity_at_inference() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::row_vector(vec![1.0, 2.0, 3.0, 4.0]));
    let mask = Tensor::row_vector(vec![1.0, 0.0, 1.0, 0.0]);
    let y = t.dropout(x, &mask, 0.5, true).unwrap();
    assert_eq!(t.value(y).data(), &[2.0, 0.0, 6.0, 0.0]);
    let z = t.dropout(x, &mask, 0.5, false).unwrap();
    assert_eq!(z, x);
}

#[test]
fn cross_entropy_matches_negative_log_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let logits = random(&mut rng, 3, 5);
        let labels = [rng.random_range(0..5), rng.random_range(0..5), rng.random_range(0..5)];
        let mut t = Tape::new();
        let l = t.constant(logits.clone());
        let ce = t.cross_entropy_rows(l, &labels).unwrap();
        for (r, &y) in labels.iter().enumerate() {
            let z: f64 = logits.row(r).iter().map(|v| v.exp()).sum();
            let expected = -(logits.get(r, y).exp() / z).ln();
            let got = t.value(ce).get(r, 0);
            assert!(got >= 0.0);
            assert!((got - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn cosine_zero_vector_is_zero() {
    let mut t = Tape::new();
    let a = t.leaf(Tensor::row_vector(vec![0.0, 0.0]), true);
    let b = t.leaf(Tensor::row_vector(vec![1.0, 2.0]), true);
    let c = t.cosine_similarity(a, b).unwrap();
    assert_eq!(t.value(c).item(), 0.0);
    let loss = t.sum(c).unwrap();
    t.backward(loss).unwrap();
    assert_eq!(t.grad(a).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let x = t.leaf(random(&mut rng, 6, 4), true);
        let w = t.leaf(random(&mut rng, 4, 3), true);
        let g = t.leaf(random(&mut rng, 1, 3), true);
        let b = t.leaf(random(&mut rng, 1, 3), true);
        let h = t.matmul(x, w).unwrap();
        let (n, _) = t.batch_norm_train(h, g, b).unwrap();
        let a = t.leaky_relu(n, 0.5).unwrap();
        let loss = t.cross_entropy_rows(a, &[0, 1, 2, 0, 1, 2]).unwrap();
        let loss = t.mean(loss).unwrap();
        t.backward(loss).unwrap();
        (t.value(loss).clone(), t.grad(x).unwrap().clone(), t.grad(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn dual_tape_gives_hessian_vector_products() {
    // f(x) = sum(sigmoid(x)^2); H v via forward-over-reverse vs finite differences of the gradient.
    let x0 = [0.3, -1.2, 0.7];
    let v = [1.0, 0.5, -2.0];
    let grad_at = |x: &[f64]| -> Vec<f64> {
        let mut t = Tape::<f64>::new();
        let xv = t.leaf(Tensor::row_vector(x.to_vec()), true);
        let s = t.sigmoid(xv).unwrap();
        let q = t.mul(s, s).unwrap();
        let l = t.sum(q).unwrap();
        t.backward(l).unwrap();
        t.grad(xv).unwrap().data().to_vec()
    };
    let mut t = Tape::<Dual>::new();
    let xv = t.leaf(Tensor::row_vector(x0.iter().zip(&v).map(|(&a, &b)| Dual::new(a, b)).collect()), true);
    let s = t.sigmoid(xv).unwrap();
    let q = t.mul(s, s).unwrap();
    let l = t.sum(q).unwrap();
    t.backward(l).unwrap();
    let hv: Vec<f64> = t.grad(xv).unwrap().data().iter().map(|d| d.eps).collect();
    let h = 1e-5;
    let plus: Vec<f64> = x0.iter().zip(&v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x0.iter().zip(&v).map(|(a, b)| a - h * b).collect();
    let (gp, gm) = (grad_at(&plus), grad_at(&minus));
    for j in 0..3 {
        let fd = (gp[j] - gm[j]) / (2.0 * h);
        assert!((hv[j] - fd).abs() < 1e-8, "{j}: {} vs {fd}", hv[j]);
    }
}

proptest::proptest! {
    #[test]
    fn cosine_is_bounded(a in proptest::collection::vec(-10.0f64..10.0, 4), b in proptest::collection::vec(-10.0f64..10.0, 4)) {
        let mut t = Tape::new();
        let av = t.constant(Tensor::row_vector(a));
        let bv = t.constant(Tensor::row_vector(b));
        let c = t.cosine_similarity(av, bv).unwrap();
        let v = t.value(c).item();
        proptest::prop_assert!((-1.0..=1.0).contains(&v));
    }
}
