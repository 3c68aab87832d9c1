use super::split_axis;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn concat_forward<S: Scalar>(parts: &[&Tensor<S>], axis: usize) -> Result<Tensor<S>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(TensorError::InvalidAxis {
            op: "concat",
            axis,
            rank,
        });
    }
    for p in parts {
        let ok = p.rank() == rank
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let (outer, _, inner) = split_axis(first.shape(), axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, data)
}

pub(crate) fn concat_backward<S: Scalar>(
    shapes: &[&[usize]],
    axis: usize,
    g: &Tensor<S>,
) -> Vec<Tensor<S>> {
    let mut start = 0;
    shapes
        .iter()
        .map(|s| {
            let len = s[axis];
            let part = slice_forward(g, axis, start, start + len).expect("valid split");
            start += len;
            part
        })
        .collect()
}

pub(crate) fn slice_forward<S: Scalar>(
    a: &Tensor<S>,
    axis: usize,
    start: usize,
    end: usize,
) -> Result<Tensor<S>> {
    if axis >= a.rank() {
        return Err(TensorError::InvalidAxis {
            op: "slice",
            axis,
            rank: a.rank(),
        });
    }
    let len = a.shape()[axis];
    if start >= end || end > len {
        return Err(TensorError::SliceOutOfRange {
            axis,
            start,
            end,
            len,
        });
    }
    let (outer, _, inner) = split_axis(a.shape(), axis);
    let mut data = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        let base = o * len * inner;
        data.extend_from_slice(&a.data()[base + start * inner..base + end * inner]);
    }
    let mut shape = a.shape().to_vec();
    shape[axis] = end - start;
    Tensor::new(shape, data)
}

pub(crate) fn slice_backward<S: Scalar>(
    in_shape: &[usize],
    axis: usize,
    start: usize,
    g: &Tensor<S>,
) -> Tensor<S> {
    let len = g.shape()[axis];
    let mut pads = vec![(0, 0); in_shape.len()];
    pads[axis] = (start, in_shape[axis] - start - len);
    pad_forward(g, &pads)
}

pub(crate) fn pad_forward<S: Scalar>(a: &Tensor<S>, pads: &[(usize, usize)]) -> Tensor<S> {
    let shape: Vec<usize> = a
        .shape()
        .iter()
        .zip(pads)
        .map(|(d, (b, e))| d + b + e)
        .collect();
    let mut out = Tensor::zeros(shape.clone());
    let out_strides = out.strides();
    let rank = a.rank();
    if rank == 0 {
        return a.clone();
    }
    let mut idx = vec![0usize; rank];
    let row = a.shape()[rank - 1];
    let rows = a.len() / row.max(1);
    for r in 0..rows {
        let mut rem = r;
        for d in (0..rank - 1).rev() {
            idx[d] = rem % a.shape()[d];
            rem /= a.shape()[d];
        }
        let dst: usize = (0..rank - 1)
            .map(|d| (idx[d] + pads[d].0) * out_strides[d])
            .sum::<usize>()
            + pads[rank - 1].0;
        out.data_mut()[dst..dst + row].copy_from_slice(&a.data()[r * row..(r + 1) * row]);
    }
    out
}

pub(crate) fn pad_backward<S: Scalar>(
    in_shape: &[usize],
    pads: &[(usize, usize)],
    g: &Tensor<S>,
) -> Tensor<S> {
    let mut cur = g.clone();
    for (axis, &(b, _)) in pads.iter().enumerate() {
        cur = slice_forward(&cur, axis, b, b + in_shape[axis]).expect("pad adjoint");
    }
    cur
}

pub(crate) fn expand_backward<S: Scalar>(in_shape: &[usize], axis: usize, g: &Tensor<S>) -> Tensor<S> {
    let (outer, n, inner) = split_axis(g.shape(), axis);
    let mut out = vec![S::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..n {
            let src = &g.data()[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d = *d + *s;
            }
        }
    }
    Tensor::new(in_shape.to_vec(), out).expect("input shape")
}

impl<S: Scalar> Tape<S> {
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let value = {
            let parts: Vec<&Tensor<S>> = inputs.iter().map(|&v| self.value(v)).collect();
            concat_forward(&parts, axis)?
        };
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        Ok(self.record(
            value,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// `a[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let value = slice_forward(self.value(a), axis, start, end)?;
        let rg = self.requires_grad(a);
        Ok(self.record(value, rg, Op::Slice { a, axis, start }))
    }

    /// Zero padding with `(before, after)` counts per axis.
    pub fn pad_zero(&mut self, a: Var, pads: &[(usize, usize)]) -> Result<Var> {
        let rank = self.value(a).rank();
        if pads.len() != rank {
            return Err(TensorError::Invalid(format!(
                "pad_zero: {} pad pairs for rank {rank}",
                pads.len()
            )));
        }
        let value = pad_forward(self.value(a), pads);
        let rg = self.requires_grad(a);
        Ok(self.record(
            value,
            rg,
            Op::Pad {
                a,
                pads: pads.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.requires_grad(a);
        Ok(self.record(value, rg, Op::Reshape { a }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let mut rows = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let mut s = vec![1];
            s.extend_from_slice(self.shape(v));
            rows.push(self.reshape(v, &s)?);
        }
        self.concat(&rows, 0)
    }

    /// Repeats a size-1 `axis` `n` times.
    pub fn expand(&mut self, a: Var, axis: usize, n: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] != 1 {
            return Err(TensorError::Invalid(format!(
                "expand: axis {axis} of {shape:?} must have size 1"
            )));
        }
        let value = {
            let src = self.value(a);
            let (outer, _, inner) = split_axis(&shape, axis);
            let mut data = Vec::with_capacity(src.len() * n);
            for o in 0..outer {
                for _ in 0..n {
                    data.extend_from_slice(&src.data()[o * inner..(o + 1) * inner]);
                }
            }
            let mut out_shape = shape.clone();
            out_shape[axis] = n;
            Tensor::new(out_shape, data)?
        };
        let rg = self.requires_grad(a);
        Ok(self.record(value, rg, Op::Expand { a, axis }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_example() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(vec![1.0]));
        let b = tape.constant(Tensor::from_vec(vec![2.0]));
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0]);
    }

    #[test]
    fn slice_of_pad_round_trips() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_fn([2, 3, 4], |i| i as f64);
        let a = tape.constant(x.clone());
        let p = tape.pad_zero(a, &[(0, 0), (1, 2), (3, 1)]).unwrap();
        assert_eq!(tape.shape(p), &[2, 6, 8]);
        let s1 = tape.slice(p, 1, 1, 4).unwrap();
        let s2 = tape.slice(s1, 2, 3, 7).unwrap();
        assert_eq!(tape.value(s2), &x);
    }

    #[test]
    fn stack_of_frames() {
        let mut tape = Tape::<f32>::new();
        let frames: Vec<Var> = (0..5)
            .map(|i| tape.constant(Tensor::full([3, 4, 4], i as f32)))
            .collect();
        let s = tape.stack(&frames).unwrap();
        assert_eq!(tape.shape(s), &[5, 3, 4, 4]);
        assert_eq!(tape.value(s).at(&[4, 2, 3, 3]), 4.0);
    }

    #[test]
    fn slice_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones([3]));
        assert!(matches!(
            tape.slice(a, 0, 2, 4),
            Err(TensorError::SliceOutOfRange { .. })
        ));
    }

    #[test]
    fn expand_backward_sums() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_f64([2, 1, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let e = tape.expand(a, 1, 3).unwrap();
        assert_eq!(tape.shape(e), &[2, 3, 2]);
        assert_eq!(tape.value(e).at(&[1, 2, 1]), 4.0);
        let l = tape.sum_all(e);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[3.0; 4]);
    }
}
