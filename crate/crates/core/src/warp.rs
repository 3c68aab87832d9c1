//! Motion-compensated alignment of side frames to the central frame.
//!
//! Flows are backward flows in pixels: `flow[:, y, x] = (dx, dy)` says that the
//! surface seen at `(x, y)` in the central frame sits at `(x + dx, y + dy)` in
//! the side frame. Flows come from the renderer and are never differentiated.

use ravg_tensor::{CustomOp, Scalar, Tape, Tensor, Var};

use crate::error::{check_shape, Error, Result};

/// Per-pixel backward flow, `[2, H, W]` with `dx` in channel 0 and `dy` in channel 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow<S>(Tensor<S>);

impl<S: Scalar> Flow<S> {
    pub fn new(t: Tensor<S>) -> Result<Self> {
        if t.rank() != 3 || t.shape()[0] != 2 {
            return Err(Error::Shape {
                op: "flow",
                expected: vec![2, 0, 0],
                got: t.shape().to_vec(),
            });
        }
        if !t.all_finite() {
            return Err(Error::Invalid("flow contains non-finite values".into()));
        }
        Ok(Self(t))
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self(Tensor::zeros([2, h, w]))
    }

    /// Same displacement everywhere.
    pub fn uniform(h: usize, w: usize, dx: f64, dy: f64) -> Self {
        let n = h * w;
        Self(Tensor::from_fn([2, h, w], |i| S::of(if i < n { dx } else { dy })))
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn cast<T: Scalar>(&self) -> Flow<T> {
        Flow(self.0.cast())
    }
}

/// `true` where the flow points outside the image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OobMask {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl OobMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Bilinear taps for one output pixel: up to four `(flat source index, weight)`.
type Taps = [(usize, f64); 4];

fn taps_for<S: Scalar>(flow: &Flow<S>) -> (Vec<Option<Taps>>, OobMask) {
    let (h, w) = (flow.height(), flow.width());
    let f = flow.tensor().data();
    let mut taps = Vec::with_capacity(h * w);
    let mut mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sx = x as f64 + f[p].f64();
            let sy = y as f64 + f[h * w + p].f64();
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                mask[p] = true;
                taps.push(None);
                continue;
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            taps.push(Some([
                (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
                (y0 * w + x1, fx * (1.0 - fy)),
                (y1 * w + x0, (1.0 - fx) * fy),
                (y1 * w + x1, fx * fy),
            ]));
        }
    }
    (
        taps,
        OobMask {
            height: h,
            width: w,
            mask,
        },
    )
}

fn check_image<S: Scalar>(image: &Tensor<S>, flow: &Flow<S>) -> Result<()> {
    if image.rank() != 3 {
        return Err(Error::Shape {
            op: "backward_warp",
            expected: vec![0, flow.height(), flow.width()],
            got: image.shape().to_vec(),
        });
    }
    check_shape(
        "backward_warp",
        &[image.shape()[0], flow.height(), flow.width()],
        image.shape(),
    )
}

fn warp_with_taps<S: Scalar>(image: &Tensor<S>, taps: &[Option<Taps>]) -> Tensor<S> {
    let c = image.shape()[0];
    let hw = taps.len();
    let src = image.data();
    let mut out = vec![S::zero(); c * hw];
    for ch in 0..c {
        let plane = &src[ch * hw..(ch + 1) * hw];
        for (p, t) in taps.iter().enumerate() {
            if let Some(t) = t {
                let v: f64 = t.iter().map(|&(i, wt)| wt * plane[i].f64()).sum();
                out[ch * hw + p] = S::of(v);
            }
        }
    }
    Tensor::new(image.shape().to_vec(), out).expect("image shape")
}

/// Bilinear backward warp of `image [C, H, W]`. Out-of-bounds samples are
/// zero and flagged in the returned mask.
pub fn backward_warp<S: Scalar>(image: &Tensor<S>, flow: &Flow<S>) -> Result<(Tensor<S>, OobMask)> {
    check_image(image, flow)?;
    let (taps, mask) = taps_for(flow);
    Ok((warp_with_taps(image, &taps), mask))
}

struct WarpOp {
    taps: Vec<Option<Taps>>,
}

impl<S: Scalar> CustomOp<S> for WarpOp {
    fn name(&self) -> &'static str {
        "backward_warp"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _out: &Tensor<S>, g: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let hw = self.taps.len();
        let c = inputs[0].shape()[0];
        let mut gi = vec![0.0f64; c * hw];
        for ch in 0..c {
            for (p, t) in self.taps.iter().enumerate() {
                if let Some(t) = t {
                    let gv = g.data()[ch * hw + p].f64();
                    for &(i, wt) in t {
                        gi[ch * hw + i] += wt * gv;
                    }
                }
            }
        }
        let gi = gi.into_iter().map(S::of).collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), gi).expect("image shape"))]
    }
}

/// Tape version of [`backward_warp`], differentiable with respect to the image.
pub fn backward_warp_var<S: Scalar>(tape: &mut Tape<S>, image: Var, flow: &Flow<S>) -> Result<(Var, OobMask)> {
    check_image(tape.value(image), flow)?;
    let (taps, mask) = taps_for(flow);
    let out = warp_with_taps(tape.value(image), &taps);
    Ok((tape.custom(&[image], out, Box::new(WarpOp { taps })), mask))
}

/// Bandwidths of the warp-confidence penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceParams {
    pub sigma_albedo: f64,
    pub sigma_normal: f64,
}

impl Default for ConfidenceParams {
    fn default() -> Self {
        Self {
            sigma_albedo: 0.1,
            sigma_normal: 0.2,
        }
    }
}

/// Per-pixel confidence in a warp, `[1, H, W]` in `[0, 1]`.
///
/// `c = exp(-|A' - A0|_1 / (3 sa)) * exp(-(1 - cos(N', N0)) / sn)`, zero where
/// the flow left the image.
pub fn warp_confidence<S: Scalar>(
    warped_albedo: &Tensor<S>,
    warped_normal: &Tensor<S>,
    center_albedo: &Tensor<S>,
    center_normal: &Tensor<S>,
    oob: &OobMask,
    params: ConfidenceParams,
) -> Result<Tensor<S>> {
    let (h, w) = (oob.height, oob.width);
    for t in [warped_albedo, warped_normal, center_albedo, center_normal] {
        check_shape("warp_confidence", &[3, h, w], t.shape())?;
    }
    let hw = h * w;
    let out = (0..hw)
        .map(|p| {
            if oob.mask[p] {
                return S::zero();
            }
            let mut l1 = 0.0;
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for c in 0..3 {
                l1 += (warped_albedo.data()[c * hw + p].f64() - center_albedo.data()[c * hw + p].f64()).abs();
                let (a, b) = (warped_normal.data()[c * hw + p].f64(), center_normal.data()[c * hw + p].f64());
                dot += a * b;
                na += a * a;
                nb += b * b;
            }
            // interpolated normals are not unit length, so compare directions
            let norm = (na * nb).sqrt();
            let cos = if norm > 0.0 { (dot / norm).clamp(-1.0, 1.0) } else { 0.0 };
            let conf = (-l1 / (3.0 * params.sigma_albedo)).exp()
                * (-(1.0 - cos) / params.sigma_normal).exp();
            S::of(conf.clamp(0.0, 1.0))
        })
        .collect();
    Ok(Tensor::new([1, h, w], out)?)
}

/// `c * warped + (1 - c) * center`, with `c [1, H, W]` broadcast over channels.
pub fn confidence_mix<S: Scalar>(warped: &Tensor<S>, center: &Tensor<S>, conf: &Tensor<S>) -> Result<Tensor<S>> {
    check_shape("confidence_mix", warped.shape(), center.shape())?;
    let (h, w) = (warped.shape()[1], warped.shape()[2]);
    check_shape("confidence_mix", &[1, h, w], conf.shape())?;
    let hw = h * w;
    let data = warped
        .data()
        .iter()
        .zip(center.data())
        .enumerate()
        .map(|(i, (&a, &b))| {
            let c = conf.data()[i % hw];
            c * a + (S::one() - c) * b
        })
        .collect();
    Ok(Tensor::new(warped.shape().to_vec(), data)?)
}
