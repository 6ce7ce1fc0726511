mod common;

use common::{probe, randn, rng};
use tfcns::tensor::{gelu, grad_check, grad_check_many, Tape, Tensor};
use tfcns::Error;

const EPS: f64 = 1e-5;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_zero() {
    let tape = Tape::new();
    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    assert_eq!(eye.matmul(m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);

    let z = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
    let any = tape.constant(randn(&[3, 4], 1));
    let out = z.matmul(any).unwrap().value();
    assert_eq!(out.shape(), &[2, 4]);
    assert!(out.data().iter().all(|&v| v == 0.0));

    let bad = tape.constant(randn(&[4, 4], 2));
    assert!(matches!(z.matmul(bad), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let a = randn(&[4, 5], 3);
    let b = randn(&[5, 3], 4);
    let err = grad_check(|x| x.matmul(x.tape().constant(b.clone()))?.sum(), &a, EPS).unwrap();
    assert!(err < 1e-6, "rel err {err}");
    let both = grad_check_many(|v| probe(v[0].matmul(v[1])?, 5), &[a, b], EPS).unwrap();
    assert!(both < 1e-6, "rel err {both}");
}

#[test]
fn batched_matmul_gradients() {
    let a = randn(&[2, 3, 4, 5], 6);
    let b = randn(&[2, 3, 5, 2], 7);
    let shared = randn(&[5, 2], 8);
    let err = grad_check_many(|v| probe(v[0].matmul(v[1])?, 9), &[a.clone(), b], EPS).unwrap();
    assert!(err < 1e-6, "rel err {err}");
    let err = grad_check_many(|v| probe(v[0].matmul(v[1])?, 10), &[a, shared], EPS).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn conv2d_identity_kernel_and_constant_bias() {
    let tape = Tape::new();
    let x = tape.constant(randn(&[2, 3, 4, 5], 11));
    let mut eye = vec![0.0; 9];
    for c in 0..3 {
        eye[c * 3 + c] = 1.0;
    }
    let w = tape.constant(t(&[3, 3, 1, 1], &eye));
    let b = tape.constant(Tensor::zeros(&[3]).unwrap());
    let y = x.conv2d(w, Some(b), 1, 0).unwrap().value();
    assert_eq!(y.data(), x.value().data());

    let wz = tape.constant(Tensor::zeros(&[2, 3, 3, 3]).unwrap());
    let beta = tape.constant(t(&[2], &[0.75, -1.5]));
    let y = x.conv2d(wz, Some(beta), 1, 1).unwrap().value();
    assert_eq!(y.shape(), &[2, 2, 4, 5]);
    assert!(y.data()[..20].iter().all(|&v| v == 0.75));
    assert!(y.data()[20..40].iter().all(|&v| v == -1.5));
}

#[test]
fn conv2d_rejects_inexact_stride() {
    let tape = Tape::new();
    let x = tape.constant(randn(&[1, 1, 6, 6], 12));
    let w = tape.constant(randn(&[1, 1, 3, 3], 13));
    assert!(matches!(x.conv2d(w, None, 2, 0), Err(Error::ShapeMismatch { .. })));
    assert_eq!(x.conv2d(w, None, 3, 0).unwrap().shape(), vec![1, 1, 2, 2]);
    let big = tape.constant(randn(&[1, 1, 7, 7], 14));
    assert!(x.conv2d(big, None, 1, 0).is_err());
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let x = randn(&[1, 1, 5, 5], 15);
    let w = randn(&[2, 1, 3, 3], 16);
    let b = randn(&[2], 17);
    let err = grad_check_many(|v| probe(v[0].conv2d(v[1], Some(v[2]), 1, 1)?, 18), &[x, w, b], EPS).unwrap();
    assert!(err < 1e-5, "rel err {err}");

    let x = randn(&[2, 3, 6, 6], 19);
    let w = randn(&[2, 3, 2, 2], 20);
    let b = randn(&[2], 21);
    let err = grad_check_many(|v| probe(v[0].conv2d(v[1], Some(v[2]), 2, 0)?, 22), &[x, w, b], EPS).unwrap();
    assert!(err < 1e-5, "strided rel err {err}");
}

#[test]
fn conv_transpose_spreads_single_pixel() {
    let tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 1, 1], &[2.5]));
    let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]).unwrap());
    let y = x.conv_transpose2d(w, None, 2).unwrap().value();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[2.5; 4]);

    let zero = tape.constant(Tensor::zeros(&[1, 2, 3, 3]).unwrap());
    let w = tape.constant(randn(&[2, 3, 2, 2], 23));
    let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let y = zero.conv_transpose2d(w, Some(b), 2).unwrap().value();
    assert_eq!(y.shape(), &[1, 3, 6, 6]);
    assert!(y.data()[36..72].iter().all(|&v| v == 2.0));
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_transpose(y)> for stride == kernel, no padding
    let tape = Tape::new();
    let x = tape.constant(randn(&[1, 2, 4, 4], 24));
    let y = tape.constant(randn(&[1, 3, 2, 2], 25));
    let w = randn(&[3, 2, 2, 2], 26);
    // the conv weight O×C×kh×kw is already the C_in×C_out layout of the adjoint
    let lhs = x.conv2d(tape.constant(w.clone()), None, 2, 0).unwrap().mul(y).unwrap().sum().unwrap();
    let rhs = y.conv_transpose2d(tape.constant(w), None, 2).unwrap().mul(x).unwrap().sum().unwrap();
    let (l, r) = (lhs.value().item().unwrap(), rhs.value().item().unwrap());
    assert!((l - r).abs() < 1e-12, "{l} vs {r}");
}

#[test]
fn conv_transpose_gradients_match_finite_differences() {
    let x = randn(&[2, 2, 3, 3], 27);
    let w = randn(&[2, 3, 2, 2], 28);
    let b = randn(&[3], 29);
    let err = grad_check_many(|v| probe(v[0].conv_transpose2d(v[1], Some(v[2]), 2)?, 30), &[x, w, b], EPS).unwrap();
    assert!(err < 1e-5, "rel err {err}");
}

/// erf by its Maclaurin series, summed until terms vanish in f64.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 {
        n += 1.0;
        term *= -x * x / n;
        sum += term / (2.0 * n + 1.0);
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn gelu_values() {
    assert_eq!(gelu(0.0f64), 0.0);
    assert!((gelu(6.0f64) - 6.0).abs() < 1e-6);
    let expected = 0.5 * (1.0 + erf_series(1.0 / std::f64::consts::SQRT_2));
    assert!((gelu(1.0f64) - expected).abs() < 1e-15, "{} vs {expected}", gelu(1.0f64));
    assert!((expected - 0.841_344_746_068_542_9).abs() < 1e-15);
    let err = grad_check(|x| probe(x.gelu()?, 31), &randn(&[3, 4], 32), EPS).unwrap();
    assert!(err < 1e-5, "rel err {err}");
}

#[test]
fn softmax_properties() {
    let tape = Tape::new();
    let u = tape.constant(t(&[3], &[0.0, 0.0, 0.0])).softmax(0).unwrap().value();
    assert!(u.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    let big = tape.constant(t(&[2], &[1000.0, 0.0])).softmax(0).unwrap().value();
    assert_eq!(big.data(), &[1.0, 0.0]);
    let r = tape.constant(randn(&[17], 33)).softmax(0).unwrap().value();
    assert!((r.sum() - 1.0).abs() < 1e-9);

    let m = tape.constant(randn(&[3, 4, 5], 34).map(|v| v * 300.0)).softmax(1).unwrap().value();
    for o in 0..3 {
        for i in 0..5 {
            let s: f64 = (0..4).map(|a| m.get(&[o, a, i])).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
    assert!(m.data().iter().all(|&p| p >= 0.0));

    let err = grad_check(|x| probe(x.softmax(1)?, 35), &randn(&[2, 4, 3], 36), EPS).unwrap();
    assert!(err < 1e-5, "softmax rel err {err}");
    let err = grad_check(|x| probe(x.log_softmax(1)?, 37), &randn(&[2, 4, 3], 38), EPS).unwrap();
    assert!(err < 1e-5, "log_softmax rel err {err}");
}

#[test]
fn layer_norm_statistics_and_gradient() {
    let tape = Tape::new();
    let gamma = tape.constant(Tensor::ones(&[6]).unwrap());
    let beta = tape.constant(Tensor::zeros(&[6]).unwrap());
    let c = tape.constant(Tensor::full(&[2, 6], 3.25).unwrap());
    let y = c.layer_norm(gamma, beta, 1e-6).unwrap().value();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let x = tape.constant(randn(&[4, 6], 39).map(|v| v * 5.0 + 2.0));
    let y = x.layer_norm(gamma, beta, 1e-6).unwrap().value();
    for row in y.data().chunks(6) {
        let mean = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }

    let err = grad_check_many(
        |v| probe(v[0].layer_norm(v[1], v[2], 1e-6)?, 40),
        &[randn(&[3, 6], 41), randn(&[6], 42), randn(&[6], 43)],
        EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "rel err {err}");
}

#[test]
fn dropout_modes() {
    let tape = Tape::new();
    let x = tape.var(randn(&[50], 44));
    let mut r = rng(45);
    assert_eq!(x.dropout(0.0, true, &mut r).unwrap().value(), x.value());
    assert_eq!(x.dropout(0.7, false, &mut r).unwrap().value(), x.value());
    assert!(x.dropout(1.0, true, &mut r).is_err());

    let ones = tape.constant(Tensor::ones(&[100_000]).unwrap());
    let y = ones.dropout(0.5, true, &mut r).unwrap().value();
    let mean = y.sum() / 1e5;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn pooling() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::full(&[1, 2, 4, 4], 1.5).unwrap());
    assert!(c.avg_pool2d(2).unwrap().value().data().iter().all(|&v| v == 1.5));
    assert!(c.max_pool2d(2).unwrap().value().data().iter().all(|&v| v == 1.5));
    let g = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).global_avg_pool().unwrap();
    assert_eq!(g.value().data(), &[2.5]);
    assert_eq!(g.shape(), vec![1, 1, 1, 1]);

    let x = tape.var(randn(&[1, 1, 3, 4], 46));
    let gap = x.global_avg_pool().unwrap().sum().unwrap();
    let grads = tape.backward(gap).unwrap();
    assert!(grads.wrt(x).unwrap().data().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));

    let err = grad_check(|x| probe(x.global_avg_pool()?, 47), &randn(&[2, 3, 4, 4], 48), EPS).unwrap();
    assert!(err < 1e-5);
    let err = grad_check(|x| probe(x.avg_pool2d(2)?, 49), &randn(&[2, 3, 4, 4], 50), EPS).unwrap();
    assert!(err < 1e-5);
    let err = grad_check(|x| probe(x.max_pool2d(2)?, 51), &randn(&[1, 2, 4, 4], 52), EPS).unwrap();
    assert!(err < 1e-5);
}

#[test]
fn elementwise_and_structural_ops() {
    let tape = Tape::new();
    assert_eq!(tape.constant(Tensor::scalar(0.0)).sigmoid().unwrap().value().data(), &[0.5]);
    let a = tape.constant(randn(&[4, 4, 2], 53));
    let b = tape.constant(randn(&[4, 4, 3], 54));
    assert_eq!(tape.concat(&[a, b], 2).unwrap().shape(), vec![4, 4, 5]);
    assert!(tape.concat(&[a, b], 0).is_err());

    let x = randn(&[2, 3, 4], 55);
    let y = randn(&[3, 1], 56);
    let cases: Vec<(&str, f64)> = vec![
        ("add", grad_check_many(|v| probe(v[0].add(v[1])?, 57), &[x.clone(), y.clone()], EPS).unwrap()),
        ("sub", grad_check_many(|v| probe(v[0].sub(v[1])?, 58), &[x.clone(), y.clone()], EPS).unwrap()),
        ("mul", grad_check_many(|v| probe(v[0].mul(v[1])?, 59), &[x.clone(), y.clone()], EPS).unwrap()),
        (
            "div",
            grad_check_many(
                |v| probe(v[0].div(v[1].mul(v[1])?.add_scalar(0.5)?)?, 60),
                &[x.clone(), y.clone()],
                EPS,
            )
            .unwrap(),
        ),
        ("sigmoid", grad_check(|v| probe(v.sigmoid()?, 61), &x, EPS).unwrap()),
        ("exp", grad_check(|v| probe(v.exp()?, 62), &x, EPS).unwrap()),
        ("ln", grad_check(|v| probe(v.mul(v)?.add_scalar(1.0)?.ln()?, 63), &x, EPS).unwrap()),
        ("reshape", grad_check(|v| probe(v.reshape(&[6, 4])?.gelu()?, 64), &x, EPS).unwrap()),
        ("permute", grad_check(|v| probe(v.permute(&[2, 0, 1])?.gelu()?, 65), &x, EPS).unwrap()),
        ("narrow", grad_check(|v| probe(v.narrow(2, 1, 2)?, 66), &x, EPS).unwrap()),
        ("sum_axes", grad_check(|v| probe(v.sum_axes(&[0, 2])?.gelu()?, 67), &x, EPS).unwrap()),
        ("mean", grad_check(|v| v.gelu()?.mean(), &x, EPS).unwrap()),
        (
            "concat",
            grad_check_many(
                |v| probe(v[0].tape().concat(&[v[0], v[1].gelu()?], 1)?, 68),
                &[randn(&[2, 3], 69), randn(&[2, 2], 70)],
                EPS,
            )
            .unwrap(),
        ),
        ("relu", grad_check(|v| probe(v.relu()?, 71), &x.map(|v| if v.abs() < 1e-3 { 0.5 } else { v }), EPS).unwrap()),
        ("standardize", grad_check(|v| probe(v.standardize(2, 1e-5)?, 72), &x, EPS).unwrap()),
    ];
    for (name, err) in cases {
        assert!(err < 1e-5, "{name}: rel err {err}");
    }
}

#[test]
fn backward_rules() {
    let tape = Tape::new();
    let w = tape.var(randn(&[5], 73));
    let g = tape.backward(w.sum().unwrap()).unwrap();
    assert_eq!(g.wrt(w).unwrap().data(), &[1.0; 5]);

    let tape = Tape::new();
    let w = tape.var(t(&[2], &[1.0, 2.0]));
    let unused = tape.var(randn(&[3], 74));
    let loss = w.mul(w).unwrap().sum().unwrap().scale(0.5).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(w).unwrap().data(), &[1.0, 2.0]);
    assert!(g.wrt(unused).is_none());
    assert_eq!(g.wrt_or_zero(unused).data(), &[0.0; 3]);

    assert!(matches!(tape.backward(w), Err(Error::NotScalar { .. })));
    let other = Tape::new();
    assert!(matches!(other.backward(loss), Err(Error::DetachedTensor)));
    let frozen = Tape::<f64>::no_grad();
    let s = frozen.var(Tensor::scalar(1.0));
    assert!(matches!(frozen.backward(s), Err(Error::DetachedTensor)));
}

#[test]
fn reused_variable_accumulates() {
    // d/dx (x·x + 3x) = 2x + 3
    let tape = Tape::new();
    let x = tape.var(t(&[3], &[1.0, -2.0, 0.5]));
    let y = x.mul(x).unwrap().add(x.scale(3.0).unwrap()).unwrap().sum().unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[5.0, -1.0, 4.0]);
}

#[test]
fn non_finite_outputs_are_errors() {
    let tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[2]).unwrap());
    assert!(matches!(z.ln(), Err(Error::NonFiniteValue { op: "ln" })));
    let big = tape.constant(Tensor::full(&[2], 1e308).unwrap());
    assert!(matches!(big.exp(), Err(Error::NonFiniteValue { .. })));
    assert!(matches!(z.div(z), Err(Error::NonFiniteValue { .. })));
}

#[test]
fn random_shape_sweep_of_grad_checks() {
    for seed in 0..6u64 {
        let b = 1 + (seed as usize % 2);
        let c = 1 + (seed as usize % 3);
        let hw = 3 + (seed as usize % 3);
        let x = randn(&[b, c, hw, hw], 100 + seed);
        let w = randn(&[2, c, 3, 3], 200 + seed);
        let err = grad_check_many(|v| probe(v[0].conv2d(v[1], None, 1, 1)?.gelu()?, seed), &[x, w], EPS).unwrap();
        assert!(err < 1e-5, "seed {seed}: conv+gelu rel err {err}");
        let m = randn(&[b, hw, c + 1], 300 + seed);
        let err = grad_check(|v| probe(v.softmax(2)?.mul(v)?, seed), &m, EPS).unwrap();
        assert!(err < 1e-5, "seed {seed}: softmax rel err {err}");
    }
}
