use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Op, Operand, Tape, Var};
use crate::tensor::Tensor;

/// Denominators with magnitude below this are replaced by `±eps` in [`BinaryKind::Div`].
pub const DEFAULT_DIV_EPS: f64 = 1e-12;

/// Binary elementwise operations. The right operand is either a tensor of the
/// same shape, a single-element tensor, or a plain scalar; both of the latter
/// broadcast over every element of the left operand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    /// `a / b` with `|b| < eps` replaced by `eps` carrying the sign of `b`
    /// (zero counts as positive). Guarded denominators receive no gradient.
    Div { eps: f64 },
    /// Ties route the gradient to the left operand.
    Max,
    /// Ties route the gradient to the left operand.
    Min,
    /// `a^b`. For non-integer exponents the base is clamped at zero.
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind<S> {
    Exp,
    /// Natural log of `max(x, 1e-12)`.
    Log,
    /// Gradient at zero is zero.
    Abs,
    Neg,
    Clamp { lo: S, hi: S },
    Relu,
    LeakyRelu(S),
    Sigmoid,
}

fn guard_div(b: f64, eps: f64) -> (f64, bool) {
    if b.abs() < eps {
        (if b < 0.0 { -eps } else { eps }, true)
    } else {
        (b, false)
    }
}

fn pow_base(a: f64, e: f64) -> f64 {
    if e.fract() != 0.0 && a < 0.0 {
        0.0
    } else {
        a
    }
}

const LOG_FLOOR: f64 = 1e-12;

fn binary_value(kind: BinaryKind, a: f64, b: f64) -> f64 {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
        BinaryKind::Div { eps } => a / guard_div(b, eps).0,
        BinaryKind::Max => a.max(b),
        BinaryKind::Min => a.min(b),
        BinaryKind::Pow => pow_base(a, b).powf(b),
    }
}

#[inline]
fn binary_scalar<S: Scalar>(kind: BinaryKind, a: S, b: S) -> S {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
        _ => S::of(binary_value(kind, a.f64(), b.f64())),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary_value<S: Scalar>(kind: UnaryKind<S>, x: S) -> S {
    match kind {
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => S::of(x.f64().max(LOG_FLOOR).ln()),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Neg => -x,
        UnaryKind::Clamp { lo, hi } => x.max(lo).min(hi),
        UnaryKind::Relu => {
            if x > S::zero() {
                x
            } else {
                S::zero()
            }
        }
        UnaryKind::LeakyRelu(slope) => {
            if x > S::zero() {
                x
            } else {
                slope * x
            }
        }
        UnaryKind::Sigmoid => S::of(sigmoid(x.f64())),
    }
}

/// Right operand as seen by the kernels.
#[derive(Clone, Copy)]
pub(crate) enum RhsRef<'a, S> {
    Tensor(&'a Tensor<S>),
    Scalar(S),
}

/// Right operand resolved to values.
enum Rhs<'a, S> {
    Each(&'a [S]),
    Broadcast(S),
}

impl<S: Scalar> Rhs<'_, S> {
    #[inline]
    fn get(&self, i: usize) -> S {
        match self {
            Rhs::Each(d) => d[i],
            Rhs::Broadcast(s) => *s,
        }
    }
}

fn resolve<'a, S: Scalar>(
    a: &Tensor<S>,
    b: RhsRef<'a, S>,
    op: &'static str,
) -> Result<Rhs<'a, S>> {
    match b {
        RhsRef::Scalar(s) => Ok(Rhs::Broadcast(s)),
        RhsRef::Tensor(t) if t.shape() == a.shape() => Ok(Rhs::Each(t.data())),
        RhsRef::Tensor(t) if t.len() == 1 => Ok(Rhs::Broadcast(t.data()[0])),
        RhsRef::Tensor(t) => Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: t.shape().to_vec(),
        }),
    }
}

fn kind_name(kind: BinaryKind) -> &'static str {
    match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div { .. } => "div",
        BinaryKind::Max => "max",
        BinaryKind::Min => "min",
        BinaryKind::Pow => "pow",
    }
}

/// Forward value of a binary op on plain tensors.
pub(crate) fn binary_forward<S: Scalar>(
    kind: BinaryKind,
    a: &Tensor<S>,
    b: RhsRef<'_, S>,
) -> Result<Tensor<S>> {
    let rhs = resolve(a, b, kind_name(kind))?;
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| binary_scalar(kind, x, rhs.get(i)))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub(crate) fn binary_backward<S: Scalar>(
    kind: BinaryKind,
    a: &Tensor<S>,
    b: RhsRef<'_, S>,
    out: &Tensor<S>,
    g: &Tensor<S>,
) -> (Tensor<S>, Option<Tensor<S>>) {
    let rhs = resolve(a, b, "backward").expect("shapes validated in forward");
    let n = a.len();
    let mut ga = vec![S::zero(); n];
    let mut gb = vec![S::zero(); n];
    for i in 0..n {
        let (x, y, gi) = (a.data()[i], rhs.get(i), g.data()[i]);
        let (da, db) = match kind {
            BinaryKind::Add => (gi, gi),
            BinaryKind::Sub => (gi, -gi),
            BinaryKind::Mul => (gi * y, gi * x),
            BinaryKind::Div { eps } => {
                let (d, guarded) = guard_div(y.f64(), eps);
                let d = S::of(d);
                let db = if guarded { S::zero() } else { -gi * x / (d * d) };
                (gi / d, db)
            }
            BinaryKind::Max => {
                if x >= y {
                    (gi, S::zero())
                } else {
                    (S::zero(), gi)
                }
            }
            BinaryKind::Min => {
                if x <= y {
                    (gi, S::zero())
                } else {
                    (S::zero(), gi)
                }
            }
            BinaryKind::Pow => {
                let base = pow_base(x.f64(), y.f64());
                let da = if x.f64() < 0.0 && base == 0.0 {
                    0.0
                } else {
                    y.f64() * base.powf(y.f64() - 1.0)
                };
                let db = if base > 0.0 {
                    out.data()[i].f64() * base.ln()
                } else {
                    0.0
                };
                (gi * S::of(da), gi * S::of(db))
            }
        };
        ga[i] = da;
        gb[i] = db;
    }
    let ga = Tensor::new(a.shape().to_vec(), ga).expect("same shape");
    let gb = match b {
        RhsRef::Scalar(_) => None,
        RhsRef::Tensor(t) if t.shape() == a.shape() => {
            Some(Tensor::new(t.shape().to_vec(), gb).expect("same shape"))
        }
        RhsRef::Tensor(t) => {
            let s: S = gb.into_iter().sum();
            Some(Tensor::new(t.shape().to_vec(), vec![s]).expect("single element"))
        }
    };
    (ga, gb)
}

pub(crate) fn unary_backward<S: Scalar>(
    kind: UnaryKind<S>,
    x: &Tensor<S>,
    out: &Tensor<S>,
    g: &Tensor<S>,
) -> Tensor<S> {
    let zero = S::zero();
    let data = x
        .data()
        .iter()
        .zip(out.data())
        .zip(g.data())
        .map(|((&x, &y), &gi)| match kind {
            UnaryKind::Exp => gi * y,
            UnaryKind::Log => {
                if x.f64() > LOG_FLOOR {
                    gi / x
                } else {
                    zero
                }
            }
            UnaryKind::Abs => {
                if x > zero {
                    gi
                } else if x < zero {
                    -gi
                } else {
                    zero
                }
            }
            UnaryKind::Neg => -gi,
            UnaryKind::Clamp { lo, hi } => {
                if x >= lo && x <= hi {
                    gi
                } else {
                    zero
                }
            }
            UnaryKind::Relu => {
                if x > zero {
                    gi
                } else {
                    zero
                }
            }
            UnaryKind::LeakyRelu(slope) => {
                if x > zero {
                    gi
                } else {
                    slope * gi
                }
            }
            UnaryKind::Sigmoid => gi * y * (S::one() - y),
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

impl<S: Scalar> Tape<S> {
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Operand<S>) -> Result<Var> {
        let (value, rg) = {
            let av = self.value(a);
            let (bval, brg) = match b {
                Operand::Var(v) => (RhsRef::Tensor(self.value(v)), self.requires_grad(v)),
                Operand::Scalar(s) => (RhsRef::Scalar(s), false),
            };
            let value = binary_forward(kind, av, bval)?;
            (value, self.requires_grad(a) || brg)
        };
        Ok(self.record(value, rg, Op::Binary { kind, a, b }))
    }

    pub fn unary(&mut self, kind: UnaryKind<S>, a: Var) -> Var {
        let value = self.value(a).map(|x| unary_value(kind, x));
        let rg = self.requires_grad(a);
        self.record(value, rg, Op::Unary { kind, a })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, Operand::Var(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, Operand::Var(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, Operand::Var(b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(
            BinaryKind::Div {
                eps: DEFAULT_DIV_EPS,
            },
            a,
            Operand::Var(b),
        )
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Max, a, Operand::Var(b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Min, a, Operand::Var(b))
    }

    pub fn add_scalar(&mut self, a: Var, s: S) -> Var {
        self.binary(BinaryKind::Add, a, Operand::Scalar(s))
            .expect("scalar operand always broadcasts")
    }

    pub fn mul_scalar(&mut self, a: Var, s: S) -> Var {
        self.binary(BinaryKind::Mul, a, Operand::Scalar(s))
            .expect("scalar operand always broadcasts")
    }

    pub fn pow_scalar(&mut self, a: Var, e: S) -> Var {
        self.binary(BinaryKind::Pow, a, Operand::Scalar(e))
            .expect("scalar operand always broadcasts")
    }

    /// `s - a`
    pub fn rsub_scalar(&mut self, s: S, a: Var) -> Var {
        let n = self.unary(UnaryKind::Neg, a);
        self.add_scalar(n, s)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Log, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Abs, a)
    }

    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Var {
        self.unary(UnaryKind::Clamp { lo, hi }, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64([v.len()], v).unwrap()
    }

    #[test]
    fn add_and_max_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1.0, 2.0]));
        let b = tape.constant(t(&[3.0, 4.0]));
        let s = tape.add(a, b).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0, 6.0]);

        let a = tape.constant(t(&[1.0, 5.0]));
        let b = tape.constant(t(&[3.0, 2.0]));
        let m = tape.maximum(a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
    }

    #[test]
    fn mul_backward_is_analytic() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1.0, 2.0]));
        let b = tape.constant(t(&[1.0, 2.0, 3.0]));
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::ShapeMismatch { op: "add", .. })
        ));
    }

    #[test]
    fn single_element_rhs_broadcasts_and_sums_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[1.0, 2.0, 3.0]));
        let b = tape.param(t(&[2.0]));
        let p = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[2.0, 4.0, 6.0]);
        let loss = tape.sum_all(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[6.0]);
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn div_guards_zero_denominator() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1.0, -1.0]));
        let b = tape.constant(t(&[0.0, -0.0]));
        let q = tape.div(a, b).unwrap();
        assert!(tape.value(q).all_finite());
        assert_eq!(tape.value(q).data()[0], 1e12);
    }

    #[test]
    fn guarded_ops_stay_finite() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[-2.0, 0.0, 3.0]));
        let l = tape.log(a);
        let p = tape.pow_scalar(a, 0.5);
        assert!(tape.value(l).all_finite());
        assert!(tape.value(p).all_finite());
    }

    #[test]
    fn clamp_and_abs() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[-2.0, 0.5, 3.0]));
        let c = tape.clamp(a, 0.0, 1.0);
        let ab = tape.abs(a);
        assert_eq!(tape.value(c).data(), &[0.0, 0.5, 1.0]);
        assert_eq!(tape.value(ab).data(), &[2.0, 0.5, 3.0]);
    }
}
