use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Parameters of a same-padded 2D convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<S> {
    /// `[out_ch, in_ch, kh, kw]`
    pub weight: Tensor<S>,
    /// `[out_ch]`
    pub bias: Tensor<S>,
}

impl<S: Scalar> ConvLayer<S> {
    pub fn new(weight: Tensor<S>, bias: Tensor<S>) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 {
            return Err(TensorError::Invalid(format!(
                "conv weight must be [out, in, kh, kw], got {ws:?}"
            )));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(TensorError::EvenKernel(ws[2], ws[3]));
        }
        if bias.shape() != [ws[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv bias",
                lhs: vec![ws[0]],
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> Self {
        Self {
            weight: Tensor::zeros([out_ch, in_ch, kh, kw]),
            bias: Tensor::zeros([out_ch]),
        }
    }

    pub fn out_ch(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_ch(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn cast<T: Scalar>(&self) -> ConvLayer<T> {
        ConvLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
}

fn dims<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>) -> Result<Dims> {
    let is = input.shape();
    let ws = weight.shape();
    if is.len() != 4 || ws.len() != 4 {
        return Err(TensorError::Invalid(format!(
            "conv2d expects [N,C,H,W] input and [O,C,kh,kw] weight, got {is:?} and {ws:?}"
        )));
    }
    if is[1] != ws[1] {
        return Err(TensorError::ChannelMismatch {
            input: is[1],
            expected: ws[1],
        });
    }
    if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
        return Err(TensorError::EvenKernel(ws[2], ws[3]));
    }
    Ok(Dims {
        n: is[0],
        c: is[1],
        h: is[2],
        w: is[3],
        o: ws[0],
        kh: ws[2],
        kw: ws[3],
    })
}

/// Valid destination range `[lo, hi)` for a tap offset `d` over a line of `len`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).clamp(0, len as isize) as usize;
    (lo, hi.max(lo))
}

/// Unfolds one `[C, H, W]` image into `[C*kh*kw, H*W]` patch rows with zero
/// padding.
fn im2col<S: Scalar>(d: &Dims, img: &[S], col: &mut [S]) {
    let hw = d.h * d.w;
    let (ph, pw) = ((d.kh / 2) as isize, (d.kw / 2) as isize);
    for c in 0..d.c {
        let plane = &img[c * hw..(c + 1) * hw];
        for ky in 0..d.kh {
            let dy = ky as isize - ph;
            let (y0, y1) = span(d.h, dy);
            for kx in 0..d.kw {
                let dx = kx as isize - pw;
                let (x0, x1) = span(d.w, dx);
                let row = &mut col[((c * d.kh + ky) * d.kw + kx) * hw..][..hw];
                row.fill(S::zero());
                if x0 >= x1 {
                    continue;
                }
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    row[y * d.w + x0..y * d.w + x1].copy_from_slice(&plane[sy * d.w + sx0..sy * d.w + sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch rows back into an image.
fn col2im<S: Scalar>(d: &Dims, col: &[S], img: &mut [S]) {
    let hw = d.h * d.w;
    let (ph, pw) = ((d.kh / 2) as isize, (d.kw / 2) as isize);
    for c in 0..d.c {
        let plane = &mut img[c * hw..(c + 1) * hw];
        for ky in 0..d.kh {
            let dy = ky as isize - ph;
            let (y0, y1) = span(d.h, dy);
            for kx in 0..d.kw {
                let dx = kx as isize - pw;
                let (x0, x1) = span(d.w, dx);
                if x0 >= x1 {
                    continue;
                }
                let row = &col[((c * d.kh + ky) * d.kw + kx) * hw..][..hw];
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let dst = &mut plane[sy * d.w + sx0..sy * d.w + sx0 + (x1 - x0)];
                    for (o, v) in dst.iter_mut().zip(&row[y * d.w + x0..y * d.w + x1]) {
                        *o = *o + *v;
                    }
                }
            }
        }
    }
}

/// Same-padded cross-correlation plus bias, lowered to one matrix product per
/// batch item. Items are independent, so results do not depend on the
/// thread count.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<Tensor<S>> {
    let d = dims(input, weight)?;
    if let Some(b) = bias {
        if b.shape() != [d.o] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![d.o],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let hw = d.h * d.w;
    let ck = d.c * d.kh * d.kw;
    let src = input.data();
    let wt = weight.data();
    let mut out = vec![S::zero(); d.n * d.o * hw];
    if hw > 0 {
        out.par_chunks_mut(d.o * hw).enumerate().for_each(|(n, dst)| {
            for (o, plane) in dst.chunks_mut(hw).enumerate() {
                plane.fill(bias.map(|b| b.data()[o]).unwrap_or(S::zero()));
            }
            let mut col = vec![S::zero(); ck * hw];
            im2col(&d, &src[n * d.c * hw..(n + 1) * d.c * hw], &mut col);
            S::gemm(d.o, ck, hw, wt, (ck as isize, 1), &col, (hw as isize, 1), S::one(), dst, (hw as isize, 1));
        });
    }
    Tensor::new([d.n, d.o, d.h, d.w], out)
}

pub(crate) struct ConvGrads<S> {
    pub input: Option<Tensor<S>>,
    pub weight: Option<Tensor<S>>,
    pub bias: Option<Tensor<S>>,
}

pub(crate) fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    g: &Tensor<S>,
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> ConvGrads<S> {
    let d = dims(input, weight).expect("validated in forward");
    let hw = d.h * d.w;
    let ck = d.c * d.kh * d.kw;
    let src = input.data();
    let wt = weight.data();
    let gd = g.data();

    let gin = want_input.then(|| {
        let mut gin = vec![S::zero(); input.len()];
        if hw > 0 {
            gin.par_chunks_mut(d.c * hw).enumerate().for_each(|(n, dst)| {
                let mut gcol = vec![S::zero(); ck * hw];
                // gcol = W^T g_n
                S::gemm(ck, d.o, hw, wt, (1, ck as isize), &gd[n * d.o * hw..], (hw as isize, 1), S::zero(), &mut gcol, (hw as isize, 1));
                col2im(&d, &gcol, dst);
            });
        }
        Tensor::new(input.shape().to_vec(), gin).expect("input shape")
    });

    let gw = want_weight.then(|| {
        let mut gw = vec![S::zero(); weight.len()];
        if hw > 0 {
            let mut col = vec![S::zero(); ck * hw];
            // Fixed item order keeps the accumulation deterministic.
            for n in 0..d.n {
                im2col(&d, &src[n * d.c * hw..(n + 1) * d.c * hw], &mut col);
                S::gemm(d.o, hw, ck, &gd[n * d.o * hw..], (hw as isize, 1), &col, (1, hw as isize), S::one(), &mut gw, (ck as isize, 1));
            }
        }
        Tensor::new(weight.shape().to_vec(), gw).expect("weight shape")
    });

    let gb = want_bias.then(|| {
        let mut gb = vec![S::zero(); d.o];
        for (o, b) in gb.iter_mut().enumerate() {
            for n in 0..d.n {
                *b = *b + gd[(n * d.o + o) * hw..(n * d.o + o + 1) * hw].iter().copied().sum();
            }
        }
        Tensor::new([d.o], gb).expect("bias shape")
    });

    ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    }
}

impl<S: Scalar> Tape<S> {
    /// Same-padded 2D convolution of `input [N, C, H, W]` with
    /// `weight [O, C, kh, kw]` and optional `bias [O]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let value = conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        let rg = self.requires_grad(input)
            || self.requires_grad(weight)
            || bias.map(|b| self.requires_grad(b)).unwrap_or(false);
        Ok(self.record(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_kernel_scales() {
        let x = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_f64([1, 1, 1, 1], &[2.0]).unwrap();
        let b = Tensor::zeros([1]);
        let y = conv2d_forward(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn identity_kernel_passes_through() {
        let x = Tensor::<f32>::from_fn([1, 1, 4, 5], |i| i as f32 * 0.5);
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.set(&[0, 0, 1, 1], 1.0);
        let y = conv2d_forward(&x, &w, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &w, None),
            Err(TensorError::ChannelMismatch {
                input: 2,
                expected: 3
            })
        ));
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvLayer::<f32>::new(Tensor::zeros([1, 1, 2, 3]), Tensor::zeros([1])).is_err());
    }
}
