use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ravg_tensor::gradcheck::{grad_check, grad_check_many, DEFAULT_EPS};
use ravg_tensor::{conv2d_forward, Activation, BinaryKind, Operand, ReduceKind, Tape, Tensor, UnaryKind};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum(t: &mut Tape<f64>, v: ravg_tensor::Var, seed: u64) -> ravg_tensor::Result<ravg_tensor::Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = t.shape(v).to_vec();
    let w = t.constant(rand_tensor(&mut rng, &shape, 0.5, 1.5));
    let p = t.mul(v, w)?;
    Ok(t.sum_all(p))
}

const PRIMITIVE_TOL: f64 = 1e-5;

#[test]
fn binary_ops_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[3, 4], 0.5, 2.0);
    let b = rand_tensor(&mut rng, &[3, 4], 0.5, 2.0);
    for kind in [
        BinaryKind::Add,
        BinaryKind::Sub,
        BinaryKind::Mul,
        BinaryKind::Div { eps: 1e-12 },
        BinaryKind::Max,
        BinaryKind::Min,
        BinaryKind::Pow,
    ] {
        let err = grad_check_many(
            |t, v| {
                let r = t.binary(kind, v[0], Operand::Var(v[1]))?;
                weighted_sum(t, r, 7)
            },
            &[a.clone(), b.clone()],
            DEFAULT_EPS,
            None,
        )
        .unwrap();
        assert!(err < PRIMITIVE_TOL, "{kind:?}: {err}");
    }
}

#[test]
fn unary_ops_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // keep away from the kinks at 0 and the clamp bounds
    let x = Tensor::from_fn([20], |i| {
        let m: f64 = rng.gen_range(0.1..1.5);
        if i % 2 == 0 {
            m
        } else {
            -m
        }
    });
    for kind in [
        UnaryKind::Exp,
        UnaryKind::Abs,
        UnaryKind::Neg,
        UnaryKind::Clamp { lo: -1.0, hi: 1.0 },
        UnaryKind::Relu,
        UnaryKind::LeakyRelu(0.01),
        UnaryKind::Sigmoid,
    ] {
        let err = grad_check(
            |t, v| {
                let r = t.unary(kind, v);
                weighted_sum(t, r, 3)
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < PRIMITIVE_TOL, "{kind:?}: {err}");
    }
    let pos = x.map(|v| v.abs() + 0.1);
    let err = grad_check(
        |t, v| {
            let r = t.log(v);
            weighted_sum(t, r, 3)
        },
        &pos,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "log: {err}");
}

#[test]
fn reductions_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[3, 4, 5], -1.0, 1.0);
    for kind in [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Max, ReduceKind::Min] {
        for axes in [vec![], vec![1], vec![0, 2]] {
            let err = grad_check(
                |t, v| {
                    let r = t.reduce(kind, v, &axes)?;
                    weighted_sum(t, r, 5)
                },
                &x,
                DEFAULT_EPS,
            )
            .unwrap();
            assert!(err < PRIMITIVE_TOL, "{kind:?} {axes:?}: {err}");
        }
    }
}

#[test]
fn activations_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[2, 5, 3, 3], -2.0, 2.0);
    for kind in [Activation::Sigmoid, Activation::SoftmaxChannel] {
        let err = grad_check(
            |t, v| {
                let r = t.activation(kind, v)?;
                weighted_sum(t, r, 9)
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < PRIMITIVE_TOL, "{kind:?}: {err}");
    }
}

#[test]
fn shape_ops_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2, 2, 4], -1.0, 1.0);
    let err = grad_check_many(
        |t, v| {
            let c = t.concat(&[v[0], v[1], v[0]], 1)?;
            let s = t.slice(c, 1, 1, 6)?;
            let p = t.pad_zero(s, &[(1, 0), (0, 2), (1, 1)])?;
            let r = t.reshape(p, &[3, 7, 6])?;
            let e = t.slice(r, 0, 0, 1)?;
            let e = t.expand(e, 0, 2)?;
            let st = t.stack(&[e, e])?;
            weighted_sum(t, st, 11)
        },
        &[a, b],
        DEFAULT_EPS,
        None,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn conv_relu_sum_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[2, 3, 5, 6], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
    let b = rand_tensor(&mut rng, &[4], -0.1, 0.1);
    let err = grad_check_many(
        |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]))?;
            let y = t.relu(y);
            weighted_sum(t, y, 13)
        },
        &[x, w, b],
        DEFAULT_EPS,
        None,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn conv_sum_grad_check_rectangular_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_tensor(&mut rng, &[1, 2, 4, 7], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 1, 5], -0.5, 0.5);
    let err = grad_check_many(
        |t, v| {
            let y = t.conv2d(v[0], v[1], None)?;
            Ok(t.sum_all(y))
        },
        &[x, w],
        DEFAULT_EPS,
        None,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn sum_loss_gives_ones() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::from_fn([2, 3, 4], |i| i as f32));
    let l = tape.sum_all(x);
    let g = tape.backward(l).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::ones([3]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn conv_forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Tensor<f32> = rand_tensor(&mut rng, &[2, 8, 16, 16], -1.0, 1.0).cast();
    let w: Tensor<f32> = rand_tensor(&mut rng, &[8, 8, 3, 3], -1.0, 1.0).cast();
    let a = conv2d_forward(&x, &w, None).unwrap();
    let b = conv2d_forward(&x, &w, None).unwrap();
    assert_eq!(a.data(), b.data());
}
