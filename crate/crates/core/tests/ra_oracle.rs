use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ravg_core::ra::{ra_block, robust_average, robust_average_var, RaHead, RaHeadVars, RaOptions};
use ravg_tensor::gradcheck::{grad_check, grad_check_many, DEFAULT_EPS};
use ravg_tensor::{ConvLayer, Tape, Tensor};

fn sort_discard(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let inner = &v[1..v.len() - 1];
    inner.iter().sum::<f64>() / inner.len() as f64
}

#[test]
fn matches_sort_discard_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.gen_range(3..=7);
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let got = robust_average(&Tensor::from_vec(vals.clone()), 0).unwrap().item();
        let want = sort_discard(&vals);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{vals:?}: {got} vs {want}");
        if n == 3 {
            let mut s = vals.clone();
            s.sort_by(f64::total_cmp);
            assert_eq!(got, s[1]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bounded_permutation_invariant_and_shift_equivariant(
        vals in prop::collection::vec(-100.0f64..100.0, 3..9),
        shift in -50.0f64..50.0,
        rot in 0usize..8,
    ) {
        let r = robust_average(&Tensor::from_vec(vals.clone()), 0).unwrap().item();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(r >= lo - 1e-12 && r <= hi + 1e-12);
        let mut rotated = vals.clone();
        rotated.rotate_left(rot % vals.len());
        let rr = robust_average(&Tensor::from_vec(rotated), 0).unwrap().item();
        prop_assert!((r - rr).abs() < 1e-9);
        let shifted: Vec<f64> = vals.iter().map(|v| v + shift).collect();
        let rs = robust_average(&Tensor::from_vec(shifted), 0).unwrap().item();
        prop_assert!((rs - (r + shift)).abs() < 1e-9);
    }
}

#[test]
fn robust_average_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // distinct values keep the min/max selection away from ties
    let x = Tensor::<f64>::from_fn([5, 2, 3, 3], |i| i as f64 * 0.37 % 1.9 + rng.gen_range(0.0..0.01));
    let w = Tensor::<f64>::from_fn([2, 3, 3], |i| 0.5 + (i as f64 * 0.13) % 1.0);
    let err = grad_check(
        |t, v| {
            let r = robust_average_var(t, v, 0)?;
            let r = t.reshape(r, &[2, 3, 3])?;
            let wc = t.constant(w.clone());
            let p = t.mul(r, wc)?;
            Ok(t.sum_all(p))
        },
        &x,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

fn random_head(rng: &mut ChaCha8Rng, c: usize) -> RaHead<f64> {
    let mut fill = |l: &mut ConvLayer<f64>, s: f64| {
        for v in l.weight.data_mut().iter_mut().chain(l.bias.data_mut().iter_mut()) {
            *v = rng.gen_range(-s..s);
        }
    };
    let mut h = RaHead::zeros(c);
    fill(&mut h.conv1, 0.4);
    fill(&mut h.conv2, 0.8);
    h
}

/// Same-padded cross-correlation on `[C, H, W]`.
fn conv(x: &[f64], c: usize, h: usize, w: usize, l: &ConvLayer<f64>) -> Vec<f64> {
    let s = l.weight.shape();
    let (co, kh, kw) = (s[0], s[2], s[3]);
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = l.bias.data()[o];
                for i in 0..c {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let (sy, sx) = (y as isize + dy as isize - (kh / 2) as isize, xx as isize + dx as isize - (kw / 2) as isize);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += l.weight.at(&[o, i, dy, dx]) * x[(i * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// Straight-line recurrent oracle: for e = 0..T-1, frame e becomes
/// (1-w) x_e + w ravg(others), using the already-updated frames.
fn ra_oracle(seq: &Tensor<f64>, head: &RaHead<f64>) -> Vec<f64> {
    let s = seq.shape();
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let n = c * h * w;
    let mut frames: Vec<Vec<f64>> = (0..t).map(|i| seq.data()[i * n..(i + 1) * n].to_vec()).collect();
    for e in 0..t {
        let avg: Vec<f64> = (0..n)
            .map(|j| {
                let others: Vec<f64> = (0..t).filter(|&i| i != e).map(|i| frames[i][j]).collect();
                sort_discard(&others)
            })
            .collect();
        let mut cat = frames[e].clone();
        cat.extend_from_slice(&avg);
        let hid: Vec<f64> = conv(&cat, 2 * c, h, w, &head.conv1)
            .into_iter()
            .map(|v| if v > 0.0 { v } else { 0.01 * v })
            .collect();
        let logit = conv(&hid, c, h, w, &head.conv2);
        for ch in 0..c {
            for p in 0..h * w {
                let wt = 1.0 / (1.0 + (-logit[p]).exp());
                let j = ch * h * w + p;
                frames[e][j] = (1.0 - wt) * frames[e][j] + wt * avg[j];
            }
        }
    }
    frames.concat()
}

#[test]
fn ra_block_matches_sequential_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (t, c) in [(4, 2), (5, 3), (7, 1)] {
        let head = random_head(&mut rng, c);
        let seq = Tensor::<f64>::from_fn([t, c, 4, 5], |_| rng.gen_range(-1.0..1.0));
        let mut tape = Tape::new();
        let x = tape.constant(seq.clone());
        let hv = RaHeadVars::constants(&mut tape, &head);
        let (out, _) = ra_block(&mut tape, x, &hv, RaOptions::default()).unwrap();
        let want = ra_oracle(&seq, &head);
        let got = tape.value(out).data();
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "T={t}: {err}");
    }
}

#[test]
fn constant_in_time_sequences_are_fixed_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..20 {
        let c = 1 + trial % 3;
        let head = random_head(&mut rng, c);
        let frame = Tensor::<f64>::from_fn([1, c, 3, 4], |_| rng.gen_range(-2.0..2.0));
        let seq = Tensor::stack(&vec![frame.index0(0); 5]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(seq.clone());
        let hv = RaHeadVars::constants(&mut tape, &head);
        let (out, _) = ra_block(&mut tape, x, &hv, RaOptions::default()).unwrap();
        assert!(tape.value(out).max_abs_diff(&seq) < 1e-12);
    }
}

#[test]
fn ra_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let c = 2;
    let head = random_head(&mut rng, c);
    let seq = Tensor::<f64>::from_fn([5, c, 3, 3], |_| rng.gen_range(-1.0..1.0));
    let xs = [
        seq,
        head.conv1.weight.clone(),
        head.conv1.bias.clone(),
        head.conv2.weight.clone(),
        head.conv2.bias.clone(),
    ];
    let err = grad_check_many(
        |t, v| {
            let hv = RaHeadVars {
                w1: v[1],
                b1: v[2],
                w2: v[3],
                b2: v[4],
            };
            let (out, _) = ra_block(t, v[0], &hv, RaOptions::default())?;
            let sq = t.mul(out, out)?;
            Ok(t.sum_all(sq))
        },
        &xs,
        DEFAULT_EPS,
        Some(40),
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}
