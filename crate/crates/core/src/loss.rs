//! Spatial base losses and their conversion into the temporal objective: the
//! predicted kernel is restricted to frame subsets (center only, and two
//! interleaved pairs) by zeroing and renormalizing, and each restricted
//! output is compared against the same central reference.

use ravg_tensor::{Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::kernel::{apply_kernels_var, mask_renormalize_var, KernelLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseLoss {
    #[default]
    Smape,
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub base: BaseLoss,
    pub lambda_center: f64,
    pub lambda_pair: f64,
    /// Weight of the full-kernel output (the spatial objective).
    pub lambda_global: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            base: BaseLoss::Smape,
            lambda_center: 1.0,
            lambda_pair: 1.0,
            lambda_global: 0.0,
            epsilon: 1e-2,
        }
    }
}

/// Global-term weight used during post-training.
pub const POST_TRAIN_LAMBDA_GLOBAL: f64 = 0.1;

impl LossConfig {
    /// Only the full combined output is supervised.
    pub fn spatial() -> Self {
        Self {
            lambda_center: 0.0,
            lambda_pair: 0.0,
            lambda_global: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ls = [self.lambda_center, self.lambda_pair, self.lambda_global];
        if ls.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {ls:?}")));
        }
        if ls.iter().all(|&l| l == 0.0) {
            return Err(Error::Config("all loss weights are zero".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("smape epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Mean of `|x - y| / (|x| + |y| + eps)`.
pub fn smape<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, eps: f64) -> Result<f64> {
    check_shape("smape", x.shape(), y.shape())?;
    let n = x.len().max(1) as f64;
    Ok(x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| {
            let (a, b) = (a.f64(), b.f64());
            (a - b).abs() / (a.abs() + b.abs() + eps)
        })
        .sum::<f64>()
        / n)
}

/// Mean absolute difference.
pub fn l1<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>) -> Result<f64> {
    check_shape("l1", x.shape(), y.shape())?;
    let n = x.len().max(1) as f64;
    Ok(x.data().iter().zip(y.data()).map(|(a, b)| (a.f64() - b.f64()).abs()).sum::<f64>() / n)
}

pub fn base_loss<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, cfg: &LossConfig) -> Result<f64> {
    match cfg.base {
        BaseLoss::Smape => smape(x, y, cfg.epsilon),
        BaseLoss::L1 => l1(x, y),
    }
}

/// The base loss on the full combined output.
pub fn spatial_loss<S: Scalar>(denoised: &Tensor<S>, reference: &Tensor<S>, cfg: &LossConfig) -> Result<f64> {
    base_loss(denoised, reference, cfg)
}

pub fn smape_var<S: Scalar>(tape: &mut Tape<S>, x: Var, y: Var, eps: f64) -> Result<Var> {
    check_shape("smape", tape.shape(x), tape.shape(y))?;
    let d = tape.sub(x, y)?;
    let num = tape.abs(d);
    let ax = tape.abs(x);
    let ay = tape.abs(y);
    let den = tape.add(ax, ay)?;
    let den = tape.add_scalar(den, S::of(eps));
    let r = tape.div(num, den)?;
    Ok(tape.mean_all(r))
}

pub fn l1_var<S: Scalar>(tape: &mut Tape<S>, x: Var, y: Var) -> Result<Var> {
    check_shape("l1", tape.shape(x), tape.shape(y))?;
    let d = tape.sub(x, y)?;
    let a = tape.abs(d);
    Ok(tape.mean_all(a))
}

pub fn base_loss_var<S: Scalar>(tape: &mut Tape<S>, x: Var, y: Var, cfg: &LossConfig) -> Result<Var> {
    match cfg.base {
        BaseLoss::Smape => smape_var(tape, x, y, cfg.epsilon),
        BaseLoss::L1 => l1_var(tape, x, y),
    }
}

/// One term of the temporal objective.
#[derive(Clone, Debug, PartialEq)]
pub struct TermSpec {
    pub name: String,
    /// Retained frame offsets; `None` means the unrestricted kernel.
    pub keep: Option<Vec<isize>>,
    pub weight: f64,
}

/// Center singleton, pairs `(-k, k-1)` and `(-k+1, k)`, and the full kernel.
/// For `T = 5` the pairs are `{-2, +1}` and `{-1, +2}`.
pub fn term_specs(layout: &KernelLayout, cfg: &LossConfig) -> Vec<TermSpec> {
    let k = layout.half_window() as isize;
    let mut terms = vec![TermSpec {
        name: "center".into(),
        keep: Some(vec![0]),
        weight: cfg.lambda_center,
    }];
    if k >= 1 {
        for pair in [[-k, k - 1], [-k + 1, k]] {
            terms.push(TermSpec {
                name: format!("pair({:+},{:+})", pair[0], pair[1]),
                keep: Some(pair.to_vec()),
                weight: cfg.lambda_pair,
            });
        }
    }
    terms.push(TermSpec {
        name: "global".into(),
        keep: None,
        weight: cfg.lambda_global,
    });
    terms
}

/// Graph handles of a temporal loss.
#[derive(Clone, Debug)]
pub struct TemporalLoss {
    pub total: Var,
    /// Unweighted value of each active term.
    pub terms: Vec<(String, Var)>,
}

/// `sum_i lambda_i * l(apply(mask(kernels, keep_i), seq), reference)` over the
/// non-zero-weight terms of [`term_specs`].
///
/// `kernels` are normalized `[K, H, W]`, `seq` is the warped color stack
/// `[T, C, H, W]` and `reference` is `[C, H, W]`.
pub fn temporal_loss_var<S: Scalar>(
    tape: &mut Tape<S>,
    kernels: Var,
    layout: &KernelLayout,
    seq: Var,
    reference: Var,
    cfg: &LossConfig,
) -> Result<TemporalLoss> {
    cfg.validate()?;
    let mut total: Option<Var> = None;
    let mut terms = Vec::new();
    for spec in term_specs(layout, cfg) {
        if spec.weight == 0.0 {
            continue;
        }
        let k = match &spec.keep {
            Some(keep) => mask_renormalize_var(tape, kernels, layout, keep)?.0,
            None => kernels,
        };
        let out = apply_kernels_var(tape, k, layout, seq)?;
        let l = base_loss_var(tape, out, reference, cfg)?;
        let weighted = tape.mul_scalar(l, S::of(spec.weight));
        total = Some(match total {
            Some(t) => tape.add(t, weighted)?,
            None => weighted,
        });
        terms.push((spec.name, l));
    }
    let total = total.expect("validated: at least one weight is non-zero");
    Ok(TemporalLoss { total, terms })
}

/// Evaluated loss with its per-term breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: Vec<(String, f64)>,
}

impl LossBreakdown {
    pub fn from_tape<S: Scalar>(tape: &Tape<S>, loss: &TemporalLoss) -> Self {
        Self {
            total: tape.value(loss.total).item().f64(),
            terms: loss
                .terms
                .iter()
                .map(|(n, v)| (n.clone(), tape.value(*v).item().f64()))
                .collect(),
        }
    }
}

/// Plain-tensor evaluation of [`temporal_loss_var`].
pub fn temporal_loss<S: Scalar>(
    kernels: &Tensor<S>,
    layout: &KernelLayout,
    seq: &Tensor<S>,
    reference: &Tensor<S>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let k = tape.constant(kernels.clone());
    let s = tape.constant(seq.clone());
    let r = tape.constant(reference.clone());
    let loss = temporal_loss_var(&mut tape, k, layout, s, r, cfg)?;
    Ok(LossBreakdown::from_tape(&tape, &loss))
}
