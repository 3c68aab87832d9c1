use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ravg_tensor::{conv2d_forward, Tape, Tensor};

/// Direct nested-loop same-padded cross-correlation in f64.
fn conv_oracle(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let mut out = Tensor::<f64>::zeros([n, o, h, wd]);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b.data()[oi] as f64;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = y as isize + ky as isize - (kh / 2) as isize;
                                let sx = xx as isize + kx as isize - (kw / 2) as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                    continue;
                                }
                                acc += w.at(&[oi, ci, ky, kx]) as f64
                                    * x.at(&[ni, ci, sy as usize, sx as usize]) as f64;
                            }
                        }
                    }
                    out.set(&[ni, oi, y, xx], acc);
                }
            }
        }
    }
    out
}

fn rand_f32(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0f32..1.0))
}

#[test]
fn random_5x5_three_channel_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = rand_f32(&mut rng, &[1, 3, 5, 5]);
    let w = rand_f32(&mut rng, &[2, 3, 3, 3]);
    let b = rand_f32(&mut rng, &[2]);
    let got = conv2d_forward(&x, &w, Some(&b)).unwrap();
    assert!(got.cast::<f64>().max_abs_diff(&conv_oracle(&x, &w, &b)) < 1e-6);
}

#[test]
fn hundred_random_shapes_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let n = rng.gen_range(1..=2);
        let c = rng.gen_range(1..=8);
        let h = rng.gen_range(1..=16);
        let wd = rng.gen_range(1..=16);
        let o = rng.gen_range(1..=8);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let x = rand_f32(&mut rng, &[n, c, h, wd]);
        // scale so |y| stays O(1) and f32 rounding stays below 1e-6
        let w = rand_f32(&mut rng, &[o, c, k, k]).map(|v| v / (c * k * k) as f32);
        let b = rand_f32(&mut rng, &[o]).map(|v| v * 0.1);
        let got = conv2d_forward(&x, &w, Some(&b)).unwrap();
        let err = got.cast::<f64>().max_abs_diff(&conv_oracle(&x, &w, &b));
        assert!(err < 1e-6, "shape {:?} k={k}: {err}", x.shape());
    }
}

fn inner(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `<L x, y> == <x, L^T y>` where `L^T y` comes from the tape's backward pass.
fn adjoint_gap<F>(x: Tensor<f64>, y_seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, ravg_tensor::Var) -> ravg_tensor::Var,
{
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let lx = f(&mut tape, xv);
    let mut rng = ChaCha8Rng::seed_from_u64(y_seed);
    let y = Tensor::from_fn(tape.shape(lx).to_vec(), |_| rng.gen_range(-1.0..1.0));
    let lhs = inner(tape.value(lx), &y);
    let yv = tape.constant(y);
    let prod = tape.mul(lx, yv).unwrap();
    let s = tape.sum_all(prod);
    let g = tape.backward(s).unwrap();
    let rhs = inner(&x, g.get(xv).unwrap());
    (lhs - rhs).abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_ops_are_adjoint_consistent(seed in 0u64..10_000, h in 2usize..7, w in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn([1, 2, h, w], |_| rng.gen_range(-1.0..1.0));
        let kern = Tensor::from_fn([3, 2, 3, 3], |_| rng.gen_range(-1.0..1.0));

        let conv = adjoint_gap(x.clone(), seed + 1, |t, v| {
            let k = t.constant(kern.clone());
            t.conv2d(v, k, None).unwrap()
        });
        prop_assert!(conv < 1e-6, "conv {conv}");

        let pad = adjoint_gap(x.clone(), seed + 2, |t, v| {
            t.pad_zero(v, &[(0, 1), (1, 0), (2, 1), (0, 3)]).unwrap()
        });
        prop_assert!(pad < 1e-6);

        let slice = adjoint_gap(x.clone(), seed + 3, |t, v| t.slice(v, 2, 1, h).unwrap());
        prop_assert!(slice < 1e-6);

        let cat = adjoint_gap(x.clone(), seed + 4, |t, v| {
            let s = t.mul_scalar(v, 2.0);
            t.concat(&[v, s], 1).unwrap()
        });
        prop_assert!(cat < 1e-6);

        let red = adjoint_gap(x, seed + 5, |t, v| {
            t.reduce(ravg_tensor::ReduceKind::Sum, v, &[1, 3]).unwrap()
        });
        prop_assert!(red < 1e-6);
    }
}
