//! Kernel-predictive output head: thresholded normalization, spatio-temporal
//! kernel application, subset masking for the temporal loss, and per-frame
//! weight statistics.
//!
//! Kernel fields are `[K, H, W]` tensors with `K = T * Kh * Kw` channels laid
//! out frame-major, then tap row, then tap column.

use ravg_tensor::{CustomOp, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};

/// Shape of a spatio-temporal kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelLayout {
    pub frames: usize,
    pub kh: usize,
    pub kw: usize,
}

impl KernelLayout {
    pub fn new(frames: usize, kh: usize, kw: usize) -> Result<Self> {
        if frames == 0 || frames % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel dims must be odd and positive, got {frames}x{kh}x{kw}"
            )));
        }
        Ok(Self { frames, kh, kw })
    }

    /// Total taps `K`.
    pub fn taps(&self) -> usize {
        self.frames * self.kh * self.kw
    }

    pub fn taps_per_frame(&self) -> usize {
        self.kh * self.kw
    }

    pub fn half_window(&self) -> usize {
        self.frames / 2
    }

    pub fn channel(&self, frame: usize, ty: usize, tx: usize) -> usize {
        (frame * self.kh + ty) * self.kw + tx
    }

    /// Central frame, central tap.
    pub fn identity_channel(&self) -> usize {
        self.channel(self.frames / 2, self.kh / 2, self.kw / 2)
    }

    /// Default threshold `1 / (2K)`.
    pub fn default_threshold(&self) -> f64 {
        1.0 / (2.0 * self.taps() as f64)
    }

    /// Frame index for a signed offset from the central frame.
    pub fn frame_of_offset(&self, offset: isize) -> Result<usize> {
        let k = self.half_window() as isize;
        if offset < -k || offset > k {
            return Err(Error::Invalid(format!(
                "frame offset {offset} outside window ±{k}"
            )));
        }
        Ok((offset + k) as usize)
    }

    fn check_field(&self, op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
        if shape.len() != 3 || shape[0] != self.taps() {
            return Err(Error::Shape {
                op,
                expected: vec![self.taps(), 0, 0],
                got: shape.to_vec(),
            });
        }
        Ok((shape[1], shape[2]))
    }
}

/// Pixels whose kernel was replaced by a fallback (row-major `[H, W]`).
pub type FallbackMask = Vec<bool>;

/// Rejects `t >= 1/K`: equal weights would be zeroed out.
pub fn validate_threshold(layout: &KernelLayout, t: f64) -> Result<()> {
    let limit = 1.0 / layout.taps() as f64;
    if !t.is_finite() || t >= limit {
        return Err(Error::Config(format!(
            "kernel threshold {t} must be below 1/K = {limit}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- threshold

fn threshold_impl<S: Scalar>(raw: &Tensor<S>, layout: &KernelLayout, t: f64) -> Result<(Tensor<S>, FallbackMask)> {
    validate_threshold(layout, t)?;
    let (h, w) = layout.check_field("threshold_normalize", raw.shape())?;
    let (k, hw) = (layout.taps(), h * w);
    let src = raw.data();
    let t = S::of(t);
    let mut out = vec![S::zero(); k * hw];
    let mut fallback = vec![false; hw];
    let id = layout.identity_channel();
    for p in 0..hw {
        let mut sum = S::zero();
        for j in 0..k {
            let v = src[j * hw + p] - t;
            if v > S::zero() {
                out[j * hw + p] = v;
                sum = sum + v;
            }
        }
        if sum > S::zero() {
            for j in 0..k {
                out[j * hw + p] = out[j * hw + p] / sum;
            }
        } else {
            fallback[p] = true;
            out[id * hw + p] = S::one();
        }
    }
    Ok((Tensor::new(raw.shape().to_vec(), out)?, fallback))
}

struct ThresholdOp<S> {
    t: S,
    fallback: FallbackMask,
}

impl<S: Scalar> CustomOp<S> for ThresholdOp<S> {
    fn name(&self) -> &'static str {
        "threshold_normalize"
    }

    fn backward(&self, inputs: &[&Tensor<S>], out: &Tensor<S>, g: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let raw = inputs[0];
        let (k, hw) = (raw.shape()[0], self.fallback.len());
        let mut gi = vec![S::zero(); raw.len()];
        for p in 0..hw {
            if self.fallback[p] {
                continue;
            }
            let mut sum = S::zero();
            let mut dot = S::zero();
            for j in 0..k {
                let v = raw.data()[j * hw + p] - self.t;
                if v > S::zero() {
                    sum = sum + v;
                }
                dot = dot + g.data()[j * hw + p] * out.data()[j * hw + p];
            }
            for j in 0..k {
                if raw.data()[j * hw + p] - self.t > S::zero() {
                    gi[j * hw + p] = (g.data()[j * hw + p] - dot) / sum;
                }
            }
        }
        vec![Some(Tensor::new(raw.shape().to_vec(), gi).expect("raw shape"))]
    }
}

/// Thresholded normalization `max(0, w - t) / sum_j max(0, w_j - t)` per pixel.
/// Pixels where every weight is `<= t` get the identity kernel and are
/// flagged; they carry no gradient.
pub fn threshold_normalize<S: Scalar>(raw: &Tensor<S>, layout: &KernelLayout, t: f64) -> Result<KernelField<S>> {
    let (weights, fallback) = threshold_impl(raw, layout, t)?;
    Ok(KernelField {
        weights,
        layout: *layout,
        fallback,
    })
}

pub fn threshold_normalize_var<S: Scalar>(
    tape: &mut Tape<S>,
    raw: Var,
    layout: &KernelLayout,
    t: f64,
) -> Result<(Var, FallbackMask)> {
    let (out, fallback) = threshold_impl(tape.value(raw), layout, t)?;
    let op = ThresholdOp {
        t: S::of(t),
        fallback: fallback.clone(),
    };
    Ok((tape.custom(&[raw], out, Box::new(op)), fallback))
}

/// Per-pixel softmax over the kernel channels (the strictly positive baseline).
pub fn softmax_normalize<S: Scalar>(raw: &Tensor<S>, layout: &KernelLayout) -> Result<KernelField<S>> {
    let mut tape = Tape::new();
    let v = tape.constant(raw.clone());
    let s = softmax_normalize_var(&mut tape, v, layout)?;
    let (h, w) = layout.check_field("softmax_normalize", raw.shape())?;
    Ok(KernelField {
        weights: tape.value(s).clone(),
        layout: *layout,
        fallback: vec![false; h * w],
    })
}

pub fn softmax_normalize_var<S: Scalar>(tape: &mut Tape<S>, raw: Var, layout: &KernelLayout) -> Result<Var> {
    layout.check_field("softmax_normalize", tape.shape(raw))?;
    Ok(tape.softmax(raw, 0)?)
}

/// Normalized kernels with their fallback flags.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelField<S> {
    pub weights: Tensor<S>,
    pub layout: KernelLayout,
    pub fallback: FallbackMask,
}

// ------------------------------------------------------------------- apply

const NORM_TOL: f64 = 1e-3;

fn check_normalized<S: Scalar>(k: &Tensor<S>, layout: &KernelLayout) -> Result<()> {
    let (h, w) = layout.check_field("apply_kernels", k.shape())?;
    let hw = h * w;
    for p in 0..hw {
        let mut sum = 0.0;
        for j in 0..layout.taps() {
            let v = k.data()[j * hw + p].f64();
            if v < -NORM_TOL {
                return Err(Error::Invalid(format!(
                    "apply_kernels: negative weight {v} at pixel {p}"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::Invalid(format!(
                "apply_kernels: kernels are not normalized (pixel {p} sums to {sum})"
            )));
        }
    }
    Ok(())
}

struct ApplyGeometry {
    t: usize,
    c: usize,
    h: usize,
    w: usize,
}

fn apply_geometry<S: Scalar>(k: &Tensor<S>, layout: &KernelLayout, seq: &Tensor<S>) -> Result<ApplyGeometry> {
    let (h, w) = layout.check_field("apply_kernels", k.shape())?;
    let s = seq.shape();
    if s.len() != 4 || s[0] != layout.frames {
        return Err(Error::Shape {
            op: "apply_kernels",
            expected: vec![layout.frames, 0, h, w],
            got: s.to_vec(),
        });
    }
    check_shape("apply_kernels", &[layout.frames, s[1], h, w], s)?;
    Ok(ApplyGeometry {
        t: s[0],
        c: s[1],
        h,
        w,
    })
}

/// Visits the in-image taps of pixel `(y, x)` as `(channel, frame, sy, sx)`.
#[inline]
fn for_each_tap(layout: &KernelLayout, g: &ApplyGeometry, y: usize, x: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (ry, rx) = ((layout.kh / 2) as isize, (layout.kw / 2) as isize);
    for tau in 0..g.t {
        for ty in 0..layout.kh {
            let sy = y as isize + ty as isize - ry;
            if sy < 0 || sy >= g.h as isize {
                continue;
            }
            for tx in 0..layout.kw {
                let sx = x as isize + tx as isize - rx;
                if sx < 0 || sx >= g.w as isize {
                    continue;
                }
                f(layout.channel(tau, ty, tx), tau, sy as usize, sx as usize);
            }
        }
    }
}

const MASS_FLOOR: f64 = 1e-12;

fn apply_impl<S: Scalar>(k: &Tensor<S>, layout: &KernelLayout, seq: &Tensor<S>) -> Result<Tensor<S>> {
    let g = apply_geometry(k, layout, seq)?;
    let hw = g.h * g.w;
    let (kd, sd) = (k.data(), seq.data());
    let center = layout.frames / 2;
    let mut out = vec![S::zero(); g.c * hw];
    let mut acc = vec![S::zero(); g.c];
    for y in 0..g.h {
        for x in 0..g.w {
            let p = y * g.w + x;
            acc.iter_mut().for_each(|a| *a = S::zero());
            let mut mass = S::zero();
            for_each_tap(layout, &g, y, x, |j, tau, sy, sx| {
                let wt = kd[j * hw + p];
                if wt == S::zero() {
                    return;
                }
                mass = mass + wt;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a = *a + wt * sd[((tau * g.c + c) * g.h + sy) * g.w + sx];
                }
            });
            for c in 0..g.c {
                out[c * hw + p] = if mass.f64() > MASS_FLOOR {
                    acc[c] / mass
                } else {
                    sd[((center * g.c + c) * g.h + y) * g.w + x]
                };
            }
        }
    }
    Ok(Tensor::new([g.c, g.h, g.w], out)?)
}

struct ApplyOp {
    layout: KernelLayout,
}

impl<S: Scalar> CustomOp<S> for ApplyOp {
    fn name(&self) -> &'static str {
        "apply_kernels"
    }

    fn backward(&self, inputs: &[&Tensor<S>], out: &Tensor<S>, gout: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (k, seq) = (inputs[0], inputs[1]);
        let layout = &self.layout;
        let g = apply_geometry(k, layout, seq).expect("validated in forward");
        let hw = g.h * g.w;
        let (kd, sd, od, gd) = (k.data(), seq.data(), out.data(), gout.data());
        let center = layout.frames / 2;
        let mut gk = vec![S::zero(); k.len()];
        let mut gs = vec![S::zero(); seq.len()];
        for y in 0..g.h {
            for x in 0..g.w {
                let p = y * g.w + x;
                let mut mass = S::zero();
                for_each_tap(layout, &g, y, x, |j, _, _, _| mass = mass + kd[j * hw + p]);
                if mass.f64() <= MASS_FLOOR {
                    for c in 0..g.c {
                        let si = ((center * g.c + c) * g.h + y) * g.w + x;
                        gs[si] = gs[si] + gd[c * hw + p];
                    }
                    continue;
                }
                for_each_tap(layout, &g, y, x, |j, tau, sy, sx| {
                    let wt = kd[j * hw + p] / mass;
                    let mut dk = S::zero();
                    for c in 0..g.c {
                        let si = ((tau * g.c + c) * g.h + sy) * g.w + sx;
                        let gc = gd[c * hw + p];
                        dk = dk + gc * (sd[si] - od[c * hw + p]);
                        gs[si] = gs[si] + gc * wt;
                    }
                    gk[j * hw + p] = dk / mass;
                });
            }
        }
        vec![
            Some(Tensor::new(k.shape().to_vec(), gk).expect("kernel shape")),
            Some(Tensor::new(seq.shape().to_vec(), gs).expect("seq shape")),
        ]
    }
}

/// Applies normalized kernels `[K, H, W]` to a frame stack `[T, C, H, W]`.
///
/// Taps that fall outside the image are dropped and the remaining weights are
/// renormalized, so every output pixel is a convex combination of in-image
/// inputs. (For normalized kernels the divisor is exactly 1 away from the
/// border.) If no in-image tap carries weight the central input pixel is
/// passed through.
pub fn apply_kernels<S: Scalar>(kernels: &Tensor<S>, layout: &KernelLayout, seq: &Tensor<S>) -> Result<Tensor<S>> {
    check_normalized(kernels, layout)?;
    apply_impl(kernels, layout, seq)
}

pub fn apply_kernels_var<S: Scalar>(tape: &mut Tape<S>, kernels: Var, layout: &KernelLayout, seq: Var) -> Result<Var> {
    check_normalized(tape.value(kernels), layout)?;
    let out = apply_impl(tape.value(kernels), layout, tape.value(seq))?;
    Ok(tape.custom(&[kernels, seq], out, Box::new(ApplyOp { layout: *layout })))
}

/// Applies RGB-predicted kernels to an auxiliary buffer stack `[T, C', H, W]`.
pub fn apply_to_aov<S: Scalar>(kernels: &Tensor<S>, layout: &KernelLayout, aov_seq: &Tensor<S>) -> Result<Tensor<S>> {
    let (h, w) = layout.check_field("apply_to_aov", kernels.shape())?;
    let s = aov_seq.shape();
    if s.len() != 4 || s[2] != h || s[3] != w {
        return Err(Error::Shape {
            op: "apply_to_aov",
            expected: vec![layout.frames, 0, h, w],
            got: s.to_vec(),
        });
    }
    apply_kernels(kernels, layout, aov_seq)
}

// ------------------------------------------------------------ mask subsets

fn mask_impl<S: Scalar>(k: &Tensor<S>, layout: &KernelLayout, keep: &[isize]) -> Result<(Tensor<S>, FallbackMask, Vec<bool>)> {
    if keep.is_empty() {
        return Err(Error::Invalid("mask_renormalize: keep set is empty".into()));
    }
    let (h, w) = layout.check_field("mask_renormalize", k.shape())?;
    let hw = h * w;
    let mut kept_frames = vec![false; layout.frames];
    for &o in keep {
        kept_frames[layout.frame_of_offset(o)?] = true;
    }
    let per = layout.taps_per_frame();
    let kept_tap = |j: usize| kept_frames[j / per];
    let n_kept = kept_frames.iter().filter(|&&b| b).count();
    let mut out = vec![S::zero(); k.len()];
    let mut flags = vec![false; hw];
    for p in 0..hw {
        let mut mass = S::zero();
        for j in 0..layout.taps() {
            if kept_tap(j) {
                mass = mass + k.data()[j * hw + p];
            }
        }
        if mass.f64() < 1e-8 {
            flags[p] = true;
            let u = S::one() / S::of(n_kept as f64);
            for (f, _) in kept_frames.iter().enumerate().filter(|(_, &b)| b) {
                out[layout.channel(f, layout.kh / 2, layout.kw / 2) * hw + p] = u;
            }
        } else {
            for j in 0..layout.taps() {
                if kept_tap(j) {
                    out[j * hw + p] = k.data()[j * hw + p] / mass;
                }
            }
        }
    }
    Ok((Tensor::new(k.shape().to_vec(), out)?, flags, kept_frames))
}

struct MaskOp {
    layout: KernelLayout,
    kept_frames: Vec<bool>,
    flags: FallbackMask,
}

impl<S: Scalar> CustomOp<S> for MaskOp {
    fn name(&self) -> &'static str {
        "mask_renormalize"
    }

    fn backward(&self, inputs: &[&Tensor<S>], out: &Tensor<S>, g: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let k = inputs[0];
        let hw = self.flags.len();
        let per = self.layout.taps_per_frame();
        let mut gk = vec![S::zero(); k.len()];
        for p in 0..hw {
            if self.flags[p] {
                continue;
            }
            let mut mass = S::zero();
            let mut dot = S::zero();
            for j in 0..self.layout.taps() {
                if self.kept_frames[j / per] {
                    mass = mass + k.data()[j * hw + p];
                    dot = dot + g.data()[j * hw + p] * out.data()[j * hw + p];
                }
            }
            for j in 0..self.layout.taps() {
                if self.kept_frames[j / per] {
                    gk[j * hw + p] = (g.data()[j * hw + p] - dot) / mass;
                }
            }
        }
        vec![Some(Tensor::new(k.shape().to_vec(), gk).expect("kernel shape"))]
    }
}

/// Zeroes the weights of frames outside `keep` (signed offsets from the
/// central frame) and renormalizes the rest per pixel. Pixels whose retained
/// mass is below 1e-8 become uniform over the retained frames' central taps
/// and are flagged.
pub fn mask_renormalize<S: Scalar>(kernels: &Tensor<S>, layout: &KernelLayout, keep: &[isize]) -> Result<KernelField<S>> {
    let (weights, fallback, _) = mask_impl(kernels, layout, keep)?;
    Ok(KernelField {
        weights,
        layout: *layout,
        fallback,
    })
}

pub fn mask_renormalize_var<S: Scalar>(
    tape: &mut Tape<S>,
    kernels: Var,
    layout: &KernelLayout,
    keep: &[isize],
) -> Result<(Var, FallbackMask)> {
    let (out, flags, kept_frames) = mask_impl(tape.value(kernels), layout, keep)?;
    let op = MaskOp {
        layout: *layout,
        kept_frames,
        flags: flags.clone(),
    };
    Ok((tape.custom(&[kernels], out, Box::new(op)), flags))
}

// -------------------------------------------------------------- statistics

/// Per-frame kernel mass `[T, H, W]`: the sum of each frame's taps per pixel.
pub fn frame_contributions<S: Scalar>(kernels: &Tensor<S>, layout: &KernelLayout) -> Result<Tensor<f64>> {
    let (h, w) = layout.check_field("frame_contributions", kernels.shape())?;
    let hw = h * w;
    let per = layout.taps_per_frame();
    let mut out = vec![0.0; layout.frames * hw];
    for j in 0..layout.taps() {
        let f = j / per;
        for p in 0..hw {
            out[f * hw + p] += kernels.data()[j * hw + p].f64();
        }
    }
    Ok(Tensor::new([layout.frames, h, w], out)?)
}

/// Mean and maximum over pixels of each frame's kernel mass, ordered from
/// offset `-k` to `+k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameWeightStats {
    pub avg: Vec<f64>,
    pub max: Vec<f64>,
}

impl FrameWeightStats {
    /// Total mean mass on non-central frames.
    pub fn off_center_avg(&self) -> f64 {
        let c = self.avg.len() / 2;
        self.avg.iter().enumerate().filter(|&(i, _)| i != c).map(|(_, v)| v).sum()
    }

    /// Averages several reports element-wise.
    pub fn mean_of(items: &[FrameWeightStats]) -> Option<FrameWeightStats> {
        let first = items.first()?;
        let n = items.len() as f64;
        let mut avg = vec![0.0; first.avg.len()];
        let mut max = vec![0.0; first.max.len()];
        for s in items {
            for (a, v) in avg.iter_mut().zip(&s.avg) {
                *a += v / n;
            }
            for (a, v) in max.iter_mut().zip(&s.max) {
                *a += v / n;
            }
        }
        Some(FrameWeightStats { avg, max })
    }

    /// Two rows in the ablation-table style:
    /// `label avg v.. ` / `      max v..`.
    pub fn format_rows(&self, label: &str) -> String {
        let row = |name: &str, vals: &[f64]| {
            let cells: Vec<String> = vals.iter().map(|v| format!("{v:>8.4}")).collect();
            format!("{name:<28} {}", cells.join(" "))
        };
        format!(
            "{}\n{}",
            row(&format!("{label} avg"), &self.avg),
            row(&format!("{:width$} max", "", width = label.len()), &self.max)
        )
    }
}

pub fn frame_weight_stats<S: Scalar>(kernels: &Tensor<S>, layout: &KernelLayout) -> Result<FrameWeightStats> {
    let contrib = frame_contributions(kernels, layout)?;
    let hw = contrib.len() / layout.frames;
    let mut avg = Vec::with_capacity(layout.frames);
    let mut max = Vec::with_capacity(layout.frames);
    for f in 0..layout.frames {
        let plane = &contrib.data()[f * hw..(f + 1) * hw];
        avg.push(plane.iter().sum::<f64>() / hw as f64);
        max.push(plane.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(FrameWeightStats { avg, max })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel(layout: &KernelLayout, vals: &[f64]) -> Tensor<f64> {
        assert_eq!(vals.len(), layout.taps());
        Tensor::from_f64([layout.taps(), 1, 1], vals).unwrap()
    }

    #[test]
    fn threshold_hand_example() {
        // A four-weight example embedded in K = 9: the extra taps sit far below t,
        // and the four weights are shifted so that w - t matches t = 0.125.
        let layout = KernelLayout::new(1, 3, 3).unwrap();
        let (t, shift) = (0.1, 0.1 - 0.125);
        let four = [0.5, 0.3, 0.125, 0.075].map(|v| v + shift);
        let mut vals = vec![-1.0; 9];
        vals[..4].copy_from_slice(&four);
        let raw = pixel(&layout, &vals);
        let k = threshold_normalize(&raw, &layout, t).unwrap();
        let w = k.weights.data();
        assert!((w[0] - 0.375 / 0.55).abs() < 1e-12);
        assert!((w[1] - 0.175 / 0.55).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
        assert_eq!(w[3], 0.0);
        assert!((w[0] - 0.6818).abs() < 1e-4 && (w[1] - 0.3182).abs() < 1e-4);
    }

    #[test]
    fn equal_weights_stay_uniform() {
        let layout = KernelLayout::new(5, 3, 3).unwrap();
        let k = layout.taps() as f64;
        let raw = pixel(&layout, &vec![1.0 / k; layout.taps()]);
        for t in [0.0, layout.default_threshold(), 0.99 / k] {
            let out = threshold_normalize(&raw, &layout, t).unwrap();
            assert!(out.weights.data().iter().all(|&v| (v - 1.0 / k).abs() < 1e-12));
        }
    }

    #[test]
    fn all_below_threshold_gives_identity() {
        let layout = KernelLayout::new(5, 3, 3).unwrap();
        let raw = pixel(&layout, &vec![0.001; layout.taps()]);
        let out = threshold_normalize(&raw, &layout, layout.default_threshold()).unwrap();
        assert!(out.fallback[0]);
        for (j, &v) in out.weights.data().iter().enumerate() {
            assert_eq!(v, if j == layout.identity_channel() { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn threshold_at_or_above_inverse_k_is_rejected() {
        let layout = KernelLayout::new(5, 3, 3).unwrap();
        let raw = Tensor::<f64>::zeros([45, 2, 2]);
        assert!(matches!(
            threshold_normalize(&raw, &layout, 1.0 / 45.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let layout = KernelLayout::new(1, 1, 1).unwrap();
        let out = softmax_normalize(&Tensor::<f64>::zeros([1, 2, 2]), &layout).unwrap();
        assert!(out.weights.data().iter().all(|&v| v == 1.0));
        let layout = KernelLayout::new(1, 3, 1).unwrap();
        let raw = Tensor::<f64>::from_f64([3, 1, 1], &[2f64.ln(), 0.0, -1e3]).unwrap();
        let w = softmax_normalize(&raw, &layout).unwrap().weights;
        assert!((w.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.data()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    fn uniform(layout: &KernelLayout, h: usize, w: usize) -> Tensor<f64> {
        Tensor::full([layout.taps(), h, w], 1.0 / layout.taps() as f64)
    }

    fn identity(layout: &KernelLayout, h: usize, w: usize) -> Tensor<f64> {
        let hw = h * w;
        let id = layout.identity_channel();
        Tensor::from_fn([layout.taps(), h, w], |i| if i / hw == id { 1.0 } else { 0.0 })
    }

    #[test]
    fn apply_examples() {
        let layout = KernelLayout::new(5, 3, 3).unwrap();
        let seq = Tensor::<f64>::full([5, 3, 4, 4], 0.7);
        let out = apply_kernels(&uniform(&layout, 4, 4), &layout, &seq).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));

        let seq = Tensor::<f64>::from_fn([5, 3, 4, 4], |i| (i as f64 * 0.37).sin());
        let out = apply_kernels(&identity(&layout, 4, 4), &layout, &seq).unwrap();
        assert_eq!(out, seq.index0(2));
    }

    #[test]
    fn unnormalized_kernels_are_rejected() {
        let layout = KernelLayout::new(5, 3, 3).unwrap();
        let seq = Tensor::<f64>::zeros([5, 3, 4, 4]);
        let k = uniform(&layout, 4, 4).map(|v| v * 2.0);
        assert!(apply_kernels(&k, &layout, &seq).is_err());
    }

    #[test]
    fn mask_examples() {
        let layout = KernelLayout::new(5, 3, 3).unwrap();
        let u = uniform(&layout, 2, 2);
        let m = mask_renormalize(&u, &layout, &[-2, 1]).unwrap();
        let s = frame_weight_stats(&m.weights, &layout).unwrap();
        for (f, &v) in s.avg.iter().enumerate() {
            let want = if f == 0 || f == 3 { 0.5 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "{f} {v}");
        }
        let all = mask_renormalize(&u, &layout, &[-2, -1, 0, 1, 2]).unwrap();
        assert!(all.weights.max_abs_diff(&u) < 1e-15);

        let id = identity(&layout, 2, 2);
        let m = mask_renormalize(&id, &layout, &[-2, 1]).unwrap();
        assert!(m.fallback.iter().all(|&f| f));
        let hw = 4;
        assert_eq!(m.weights.data()[layout.channel(0, 1, 1) * hw], 0.5);
        assert_eq!(m.weights.data()[layout.channel(3, 1, 1) * hw], 0.5);
        assert!((m.weights.sum_all() - 4.0).abs() < 1e-12);

        assert!(mask_renormalize(&u, &layout, &[]).is_err());
        assert!(mask_renormalize(&u, &layout, &[3]).is_err());
    }

    #[test]
    fn aov_examples() {
        let layout = KernelLayout::new(5, 3, 3).unwrap();
        let k = uniform(&layout, 4, 4);
        let rgb = Tensor::<f64>::from_fn([5, 3, 4, 4], |i| (i as f64).cos());
        assert_eq!(
            apply_to_aov(&k, &layout, &rgb).unwrap(),
            apply_kernels(&k, &layout, &rgb).unwrap()
        );
        let c = Tensor::<f64>::full([5, 1, 4, 4], 3.0);
        assert!(apply_to_aov(&k, &layout, &c).unwrap().data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
        let wrong = Tensor::<f64>::zeros([5, 1, 4, 5]);
        assert!(apply_to_aov(&k, &layout, &wrong).is_err());
    }

    #[test]
    fn stats_examples() {
        let layout = KernelLayout::new(5, 5, 5).unwrap();
        let s = frame_weight_stats(&uniform(&layout, 3, 3), &layout).unwrap();
        for f in 0..5 {
            assert!((s.avg[f] - 0.2).abs() < 1e-12 && (s.max[f] - 0.2).abs() < 1e-12);
        }
        let s = frame_weight_stats(&identity(&layout, 3, 3), &layout).unwrap();
        assert_eq!(s.avg, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(s.max, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let rows = FrameWeightStats {
            avg: vec![0.0580, 0.1402, 0.5694, 0.1531, 0.0792],
            max: vec![0.9959, 0.9982, 1.0, 0.9925, 0.9582],
        }
        .format_rows("RA + our loss");
        assert!(rows.contains("  0.0580   0.1402   0.5694   0.1531   0.0792"));
        assert!(rows.lines().nth(1).unwrap().contains("max"));
    }
}
