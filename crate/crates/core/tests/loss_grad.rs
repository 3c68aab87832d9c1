use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ravg_core::kernel::{softmax_normalize, KernelLayout};
use ravg_core::loss::{smape, smape_var, temporal_loss, temporal_loss_var, BaseLoss, LossConfig};
use ravg_core::model::{ForwardOptions, Model, ModelConfig, COLOR_CHANNELS, INPUT_CHANNELS};
use ravg_tensor::gradcheck::{grad_check, grad_check_many, DEFAULT_EPS};
use ravg_tensor::{Tape, Tensor};

#[test]
fn smape_gradient_and_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::from_fn([3, 4, 4], |_| rng.gen_range(0.1..2.0));
    let y = Tensor::<f64>::from_fn([3, 4, 4], |_| rng.gen_range(0.1..2.0));
    let err = grad_check(
        |t, v| {
            let yc = t.constant(y.clone());
            Ok(smape_var(t, v, yc, 1e-2)?)
        },
        &x,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
    let want: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs() / (a.abs() + b.abs() + 1e-2))
        .sum::<f64>()
        / x.len() as f64;
    assert!((smape(&x, &y, 1e-2).unwrap() - want).abs() < 1e-12);
}

#[test]
fn temporal_loss_gradients() {
    let layout = KernelLayout::new(5, 3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let raw = Tensor::<f64>::from_fn([45, 3, 3], |_| rng.gen_range(-1.0..1.0));
    let k = softmax_normalize(&raw, &layout).unwrap().weights;
    let seq = Tensor::<f64>::from_fn([5, 3, 3, 3], |_| rng.gen_range(0.1..1.0));
    let reference = Tensor::<f64>::from_fn([3, 3, 3], |_| rng.gen_range(0.1..1.0));
    for cfg in [
        LossConfig::default(),
        LossConfig {
            lambda_global: 0.1,
            ..LossConfig::default()
        },
        LossConfig {
            base: BaseLoss::L1,
            ..LossConfig::default()
        },
    ] {
        let err = grad_check_many(
            |t, v| {
                let r = t.constant(reference.clone());
                Ok(temporal_loss_var(t, v[0], &layout, v[1], r, &cfg)?.total)
            },
            &[k.clone(), seq.clone()],
            DEFAULT_EPS,
            None,
        )
        .unwrap();
        assert!(err < 1e-4, "{cfg:?}: {err}");
        let plain = temporal_loss(&k, &layout, &seq, &reference, &cfg).unwrap();
        let active = [cfg.lambda_center, cfg.lambda_pair, cfg.lambda_pair, cfg.lambda_global]
            .iter()
            .filter(|&&l| l > 0.0)
            .count();
        assert_eq!(plain.terms.len(), active);
    }
}

fn small(baseline: bool) -> ModelConfig {
    let cfg = ModelConfig {
        channels: 4,
        n_res_blocks: 2,
        ra_positions: vec![1, 2],
        skip_after_ra: 1,
        ..ModelConfig::desk_tiny()
    };
    if baseline {
        cfg.to_tkpcn()
    } else {
        cfg
    }
}

#[test]
fn end_to_end_gradients_through_the_network() {
    for baseline in [false, true] {
        let model = Model::<f32>::build(small(baseline), 4).unwrap().cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = Tensor::<f64>::from_fn([5, INPUT_CHANNELS, 8, 8], |_| rng.gen_range(0.05..1.0));
        let reference = Tensor::<f64>::from_fn([3, 8, 8], |_| rng.gen_range(0.05..1.0));
        let layout = model.layout();
        let mut xs: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
        xs.push(input);
        let n = model.params().len();
        let err = grad_check_many(
            |t, v| {
                let f = model.forward(t, &v[..n], v[n], ForwardOptions::default())?;
                assert!(f.fallback.iter().all(|b| !b));
                let color = t.slice(v[n], 1, 0, COLOR_CHANNELS)?;
                let r = t.constant(reference.clone());
                Ok(temporal_loss_var(t, f.kernels, &layout, color, r, &LossConfig::default())?.total)
            },
            &xs,
            DEFAULT_EPS,
            Some(6),
        )
        .unwrap();
        assert!(err < 1e-4, "baseline={baseline}: {err}");
    }
}

#[test]
fn loss_decreases_with_training_signal() {
    // One plain gradient step on the kernels lowers the temporal loss.
    let layout = KernelLayout::new(5, 3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let raw = Tensor::<f64>::from_fn([45, 4, 4], |_| rng.gen_range(-1.0..1.0));
    let seq = Tensor::<f64>::from_fn([5, 3, 4, 4], |_| rng.gen_range(0.1..1.0));
    let reference = Tensor::<f64>::from_fn([3, 4, 4], |_| rng.gen_range(0.1..1.0));
    let eval = |raw: &Tensor<f64>| -> (f64, Tensor<f64>) {
        let mut t = Tape::new();
        let r = t.param(raw.clone());
        let k = ravg_core::kernel::softmax_normalize_var(&mut t, r, &layout).unwrap();
        let s = t.constant(seq.clone());
        let refc = t.constant(reference.clone());
        let loss = temporal_loss_var(&mut t, k, &layout, s, refc, &LossConfig::default()).unwrap();
        let v = t.value(loss.total).item();
        let g = t.backward(loss.total).unwrap();
        (v, g.get(r).unwrap().clone())
    };
    let (before, g) = eval(&raw);
    let stepped = raw.zip_map(&g, |a, b| a - 0.5 * b).unwrap();
    let (after, _) = eval(&stepped);
    assert!(after < before, "{after} >= {before}");
}
