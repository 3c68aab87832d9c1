//! Robust Average operator and the recurrent RA block.
//!
//! The robust average of a set discards its minimum and maximum and averages
//! the rest. An RA block walks over the frames of a latent sequence in index
//! order; at each step it blends the excluded frame with the robust average of
//! the other frames using per-pixel weights from a small conv head.

use ravg_tensor::{ConvLayer, CustomOp, Scalar, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Discarded positions within one fiber: first minimum, and first maximum
/// among the remaining positions.
fn extremes<S: Scalar>(fiber: impl Iterator<Item = S> + Clone) -> (usize, usize) {
    let mut imin = 0;
    let mut vmin = S::infinity();
    for (i, v) in fiber.clone().enumerate() {
        if v < vmin {
            vmin = v;
            imin = i;
        }
    }
    let mut imax = usize::MAX;
    let mut vmax = S::neg_infinity();
    for (i, v) in fiber.enumerate() {
        if i != imin && (imax == usize::MAX || v > vmax) {
            vmax = v;
            imax = i;
        }
    }
    (imin, imax)
}

struct Layout {
    outer: usize,
    len: usize,
    inner: usize,
}

fn layout(shape: &[usize], axis: usize) -> Result<Layout> {
    if axis >= shape.len() {
        return Err(Error::Invalid(format!(
            "robust_average: axis {axis} out of range for {shape:?}"
        )));
    }
    let len = shape[axis];
    if len < 3 {
        return Err(Error::Invalid(format!(
            "robust_average needs at least 3 values along the set axis, got {len}"
        )));
    }
    Ok(Layout {
        outer: shape[..axis].iter().product(),
        len,
        inner: shape[axis + 1..].iter().product(),
    })
}

fn robust_average_impl<S: Scalar>(values: &Tensor<S>, axis: usize) -> Result<(Tensor<S>, Vec<(u32, u32)>)> {
    let l = layout(values.shape(), axis)?;
    let src = values.data();
    let denom = S::of((l.len - 2) as f64);
    let mut out = Vec::with_capacity(l.outer * l.inner);
    let mut picks = Vec::with_capacity(l.outer * l.inner);
    for o in 0..l.outer {
        for i in 0..l.inner {
            let at = |k: usize| src[(o * l.len + k) * l.inner + i];
            let (imin, imax) = extremes((0..l.len).map(at));
            let mut acc = S::zero();
            for k in 0..l.len {
                if k != imin && k != imax {
                    acc = acc + at(k);
                }
            }
            out.push(acc / denom);
            picks.push((imin as u32, imax as u32));
        }
    }
    let mut shape = values.shape().to_vec();
    shape.remove(axis);
    Ok((Tensor::new(shape, out)?, picks))
}

/// Mean after discarding the minimum and maximum along `axis` (length ≥ 3).
///
/// The kept values are summed in ascending index order. With ties the first
/// minimal element is discarded, then the first maximal element among the
/// rest, so exactly two elements are always dropped.
pub fn robust_average<S: Scalar>(values: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    Ok(robust_average_impl(values, axis)?.0)
}

struct RobustAverageOp {
    axis: usize,
    picks: Vec<(u32, u32)>,
}

impl<S: Scalar> CustomOp<S> for RobustAverageOp {
    fn name(&self) -> &'static str {
        "robust_average"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, g: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let x = inputs[0];
        let l = layout(x.shape(), self.axis).expect("validated in forward");
        let scale = S::one() / S::of((l.len - 2) as f64);
        let mut gi = vec![S::zero(); x.len()];
        for o in 0..l.outer {
            for i in 0..l.inner {
                let f = o * l.inner + i;
                let (imin, imax) = self.picks[f];
                let gv = g.data()[f] * scale;
                for k in 0..l.len {
                    if k as u32 != imin && k as u32 != imax {
                        gi[(o * l.len + k) * l.inner + i] = gv;
                    }
                }
            }
        }
        vec![Some(Tensor::new(x.shape().to_vec(), gi).expect("input shape"))]
    }
}

/// Tape version of [`robust_average`]. Gradient `1/(|S|-2)` flows to kept
/// elements and zero to the two discarded ones.
pub fn robust_average_var<S: Scalar>(tape: &mut Tape<S>, values: Var, axis: usize) -> Result<Var> {
    let (out, picks) = robust_average_impl(tape.value(values), axis)?;
    Ok(tape.custom(&[values], out, Box::new(RobustAverageOp { axis, picks })))
}

/// Weight head of one RA block: 3×3 conv `2C → C`, leaky ReLU, 1×1 conv
/// `C → 1`, sigmoid. Shared by every step of the block.
#[derive(Clone, Debug, PartialEq)]
pub struct RaHead<S> {
    pub conv1: ConvLayer<S>,
    pub conv2: ConvLayer<S>,
}

impl<S: Scalar> RaHead<S> {
    pub fn zeros(channels: usize) -> Self {
        Self {
            conv1: ConvLayer::zeros(channels, 2 * channels, 3, 3),
            conv2: ConvLayer::zeros(1, channels, 1, 1),
        }
    }

    pub fn channels(&self) -> usize {
        self.conv2.in_ch()
    }

    /// Head whose blend weight is the constant `sigmoid(bias)` everywhere.
    pub fn constant(channels: usize, bias: f64) -> Self {
        let mut h = Self::zeros(channels);
        h.conv2.bias.data_mut()[0] = S::of(bias);
        h
    }

    pub fn cast<T: Scalar>(&self) -> RaHead<T> {
        RaHead {
            conv1: self.conv1.cast(),
            conv2: self.conv2.cast(),
        }
    }
}

/// [`RaHead`] parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RaHeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl RaHeadVars {
    pub fn constants<S: Scalar>(tape: &mut Tape<S>, head: &RaHead<S>) -> Self {
        Self {
            w1: tape.constant(head.conv1.weight.clone()),
            b1: tape.constant(head.conv1.bias.clone()),
            w2: tape.constant(head.conv2.weight.clone()),
            b2: tape.constant(head.conv2.bias.clone()),
        }
    }

    pub fn params<S: Scalar>(tape: &mut Tape<S>, head: &RaHead<S>) -> Self {
        Self {
            w1: tape.param(head.conv1.weight.clone()),
            b1: tape.param(head.conv1.bias.clone()),
            w2: tape.param(head.conv2.weight.clone()),
            b2: tape.param(head.conv2.bias.clone()),
        }
    }
}

/// How the other frames were averaged in an RA step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    Robust,
    /// Fewer than three other frames: plain mean (only when allowed).
    MeanFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct RaOptions {
    /// Permit `T = 3` windows by averaging the two other frames with a plain mean.
    pub allow_mean_fallback: bool,
}

/// Output of [`ra_step`].
pub struct RaStep {
    pub seq: Var,
    /// Blend weight on the average, `[1, 1, H, W]`.
    pub weight: Var,
    pub averaging: Averaging,
}

/// One RA step on `seq [T, C, H, W]`: the excluded frame becomes
/// `(1 - w) * x_e + w * ravg(others)`; other frames pass through.
pub fn ra_step<S: Scalar>(
    tape: &mut Tape<S>,
    seq: Var,
    excluded: usize,
    head: &RaHeadVars,
    opts: RaOptions,
) -> Result<RaStep> {
    let shape = tape.shape(seq).to_vec();
    if shape.len() != 4 {
        return Err(Error::Invalid(format!("ra_step expects [T, C, H, W], got {shape:?}")));
    }
    let (t, c) = (shape[0], shape[1]);
    if excluded >= t {
        return Err(Error::Invalid(format!("excluded index {excluded} outside window of {t}")));
    }
    if t < 4 && !(opts.allow_mean_fallback && t == 3) {
        return Err(Error::Config(format!(
            "RA blocks need a window of at least 4 frames, got {t}"
        )));
    }
    let frames: Vec<Var> = (0..t)
        .map(|i| tape.slice(seq, 0, i, i + 1))
        .collect::<std::result::Result<_, _>>()?;
    let others: Vec<Var> = frames
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != excluded)
        .map(|(_, &v)| v)
        .collect();
    let stacked = tape.concat(&others, 0)?;
    let (avg, averaging) = if others.len() >= 3 {
        let a = robust_average_var(tape, stacked, 0)?;
        (a, Averaging::Robust)
    } else {
        let a = tape.reduce(ravg_tensor::ReduceKind::Mean, stacked, &[0])?;
        (a, Averaging::MeanFallback)
    };
    let avg = tape.reshape(avg, &[1, c, shape[2], shape[3]])?;
    let x_e = frames[excluded];

    let inp = tape.concat(&[x_e, avg], 1)?;
    let hid = tape.conv2d(inp, head.w1, Some(head.b1))?;
    let hid = tape.leaky_relu(hid);
    let logit = tape.conv2d(hid, head.w2, Some(head.b2))?;
    let weight = tape.sigmoid(logit);

    let wide = tape.expand(weight, 1, c)?;
    let diff = tape.sub(avg, x_e)?;
    let step = tape.mul(wide, diff)?;
    let blended = tape.add(x_e, step)?;

    let mut parts = frames;
    parts[excluded] = blended;
    let seq = tape.concat(&parts, 0)?;
    Ok(RaStep {
        seq,
        weight,
        averaging,
    })
}

/// Full recurrent RA block: steps with excluded index `0, 1, …, T-1`, each
/// consuming the previous step's output.
pub fn ra_block<S: Scalar>(tape: &mut Tape<S>, seq: Var, head: &RaHeadVars, opts: RaOptions) -> Result<(Var, Averaging)> {
    let t = tape.shape(seq).first().copied().unwrap_or(0);
    let mut cur = seq;
    let mut averaging = Averaging::Robust;
    for e in 0..t {
        let step = ra_step(tape, cur, e, head, opts)?;
        cur = step.seq;
        if step.averaging == Averaging::MeanFallback {
            averaging = Averaging::MeanFallback;
        }
    }
    Ok((cur, averaging))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let t = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(robust_average(&t, 0).unwrap().item(), 2.0);
        let t = Tensor::<f64>::from_vec(vec![0.0, 10.0, 2.0, 4.0, 100.0]);
        assert!((robust_average(&t, 0).unwrap().item() - 16.0 / 3.0).abs() < 1e-12);
        for c in [-3.5, 0.0, 7.25] {
            let t = Tensor::<f64>::full([4], c);
            assert_eq!(robust_average(&t, 0).unwrap().item(), c);
        }
    }

    #[test]
    fn too_small_set_is_an_error() {
        let t = Tensor::<f64>::from_vec(vec![1.0, 2.0]);
        assert!(robust_average(&t, 0).is_err());
    }

    #[test]
    fn ties_still_drop_two_elements() {
        let t = Tensor::<f64>::from_vec(vec![1.0, 1.0, 1.0, 5.0, 5.0]);
        // drops one 1 and one 5
        assert!((robust_average(&t, 0).unwrap().item() - 7.0 / 3.0).abs() < 1e-12);
        let mut tape = Tape::<f64>::new();
        let v = tape.param(Tensor::full([4], 2.0));
        let r = robust_average_var(&mut tape, v, 0).unwrap();
        let g = tape.backward(r).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn interior_axis() {
        let t = Tensor::<f64>::from_f64([2, 3, 2], &[1.0, 9.0, 5.0, 1.0, 3.0, 4.0, 0.0, 0.0, 8.0, 8.0, 2.0, 1.0])
            .unwrap();
        let r = robust_average(&t, 1).unwrap();
        assert_eq!(r.shape(), &[2, 2]);
        assert_eq!(r.data(), &[3.0, 4.0, 2.0, 1.0]);
    }

    #[test]
    fn t3_requires_explicit_fallback() {
        let mut tape = Tape::<f64>::new();
        let seq = tape.constant(Tensor::from_fn([3, 2, 2, 2], |i| i as f64));
        let head = RaHeadVars::constants(&mut tape, &RaHead::constant(2, 0.0));
        assert!(ra_block(&mut tape, seq, &head, RaOptions::default()).is_err());
        let (_, avg) = ra_block(
            &mut tape,
            seq,
            &head,
            RaOptions {
                allow_mean_fallback: true,
            },
        )
        .unwrap();
        assert_eq!(avg, Averaging::MeanFallback);
    }
}
