use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::{strides, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Gradient goes to the first maximal element in row-major order.
    Max,
    /// Gradient goes to the first minimal element in row-major order.
    Min,
}

/// Maps every input flat index to its output flat index once `axes` are removed.
fn output_index_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    let out_strides = strides(&out_shape);
    // stride contributed by each input axis to the output index
    let mut contrib = Vec::with_capacity(shape.len());
    let mut k = 0;
    for i in 0..shape.len() {
        if axes.contains(&i) {
            contrib.push(0);
        } else {
            contrib.push(out_strides[k]);
            k += 1;
        }
    }
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&contrib).map(|(i, c)| i * c).sum());
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, map)
}

fn normalize_axes(rank: usize, axes: &[usize]) -> Result<Vec<usize>> {
    let mut ax = axes.to_vec();
    ax.sort_unstable();
    ax.dedup();
    if let Some(&bad) = ax.iter().find(|&&a| a >= rank) {
        return Err(TensorError::InvalidAxis {
            op: "reduce",
            axis: bad,
            rank,
        });
    }
    Ok(ax)
}

/// Returns the reduced tensor plus, for max/min, the picked input index per output.
pub(crate) fn reduce_forward<S: Scalar>(
    kind: ReduceKind,
    a: &Tensor<S>,
    axes: &[usize],
) -> (Tensor<S>, Vec<usize>) {
    if axes.len() == a.rank() && matches!(kind, ReduceKind::Sum | ReduceKind::Mean) {
        let mut acc = S::zero();
        for &v in a.data() {
            acc = acc + v;
        }
        if kind == ReduceKind::Mean {
            acc = acc / S::of(a.len() as f64);
        }
        return (Tensor::scalar(acc), Vec::new());
    }
    let (out_shape, map) = output_index_map(a.shape(), axes);
    let m: usize = out_shape.iter().product();
    let count = a.len() / m.max(1);
    match kind {
        ReduceKind::Sum | ReduceKind::Mean => {
            let mut acc = vec![S::zero(); m];
            for (i, &o) in map.iter().enumerate() {
                acc[o] = acc[o] + a.data()[i];
            }
            if kind == ReduceKind::Mean {
                let c = S::of(count as f64);
                acc.iter_mut().for_each(|v| *v = *v / c);
            }
            (Tensor::new(out_shape, acc).expect("reduced shape"), Vec::new())
        }
        ReduceKind::Max | ReduceKind::Min => {
            let mut best: Vec<Option<usize>> = vec![None; m];
            for (i, &o) in map.iter().enumerate() {
                let v = a.data()[i];
                let better = match best[o] {
                    None => true,
                    Some(j) => {
                        let cur = a.data()[j];
                        if kind == ReduceKind::Max {
                            v > cur
                        } else {
                            v < cur
                        }
                    }
                };
                if better {
                    best[o] = Some(i);
                }
            }
            let picked: Vec<usize> = best.into_iter().map(|b| b.expect("nonempty")).collect();
            let vals = picked.iter().map(|&i| a.data()[i]).collect();
            (Tensor::new(out_shape, vals).expect("reduced shape"), picked)
        }
    }
}

pub(crate) fn reduce_backward<S: Scalar>(
    kind: ReduceKind,
    a: &Tensor<S>,
    axes: &[usize],
    picked: &[usize],
    g: &Tensor<S>,
) -> Tensor<S> {
    let mut out = vec![S::zero(); a.len()];
    match kind {
        ReduceKind::Sum | ReduceKind::Mean if g.len() == 1 => {
            let scale = if kind == ReduceKind::Mean {
                S::one() / S::of(a.len() as f64)
            } else {
                S::one()
            };
            out.fill(g.data()[0] * scale);
        }
        ReduceKind::Sum | ReduceKind::Mean => {
            let (_, map) = output_index_map(a.shape(), axes);
            let scale = if kind == ReduceKind::Mean {
                S::of(g.len() as f64 / a.len() as f64)
            } else {
                S::one()
            };
            for (i, &o) in map.iter().enumerate() {
                out[i] = g.data()[o] * scale;
            }
        }
        ReduceKind::Max | ReduceKind::Min => {
            for (o, &i) in picked.iter().enumerate() {
                out[i] = out[i] + g.data()[o];
            }
        }
    }
    Tensor::new(a.shape().to_vec(), out).expect("input shape")
}

impl<S: Scalar> Tape<S> {
    /// Reduces over `axes` (removed from the output shape). An empty axis list
    /// reduces over every axis and yields a rank-0 tensor.
    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.value(a).rank();
        let axes = if axes.is_empty() {
            (0..rank).collect()
        } else {
            normalize_axes(rank, axes)?
        };
        let (value, picked) = reduce_forward(kind, self.value(a), &axes);
        let rg = self.requires_grad(a);
        Ok(self.record(
            value,
            rg,
            Op::Reduce {
                kind,
                a,
                axes,
                picked,
            },
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.reduce(ReduceKind::Sum, a, &[])
            .expect("full reduction is always valid")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        self.reduce(ReduceKind::Mean, a, &[])
            .expect("full reduction is always valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_and_mean() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let s = tape.sum_all(a);
        assert_eq!(tape.value(s).item(), 6.0);
        let ones = tape.constant(Tensor::ones([2, 3]));
        let m = tape.reduce(ReduceKind::Mean, ones, &[1]).unwrap();
        assert_eq!(tape.value(m).shape(), &[2]);
        assert_eq!(tape.value(m).data(), &[1.0, 1.0]);
    }

    #[test]
    fn max_gradient_goes_to_first_tie() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_vec(vec![1.0, 5.0, 5.0]));
        let m = tape.reduce(ReduceKind::Max, a, &[]).unwrap();
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn min_over_inner_axis() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_f64([2, 3], &[3.0, 1.0, 1.0, 0.0, 4.0, -1.0]).unwrap());
        let m = tape.reduce(ReduceKind::Min, a, &[1]).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, -1.0]);
        let s = tape.sum_all(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn invalid_axis_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones([2, 2]));
        assert!(matches!(
            tape.reduce(ReduceKind::Sum, a, &[2]),
            Err(TensorError::InvalidAxis { axis: 2, .. })
        ));
    }
}
