//! Central finite-difference gradient checking in 64-bit precision.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Magnitude below which a gradient counts as zero. A central difference
/// of an O(1) objective with step 1e-6 resolves derivatives only to
/// `ulp / 2e-6 ≈ 1.1e-10`, and exactly-zero gradients read as a few of
/// those quanta.
pub const ZERO_FLOOR: f64 = 1e-5;

/// `|analytic - numeric| / max(|analytic|, |numeric|, ZERO_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ZERO_FLOOR)
}

fn eval<F>(f: &F, xs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(TensorError::NonFinite("grad_check objective"));
    }
    Ok(v)
}

/// Max relative error between tape gradients and central differences of a
/// scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|t, v| f(t, v[0]), std::slice::from_ref(x), eps, None)
}

/// Multi-input variant. With `max_coords = Some(n)`, only `n` evenly spaced
/// elements of each input are probed numerically.
pub fn grad_check_many<F>(
    f: F,
    xs: &[Tensor<f64>],
    eps: f64,
    max_coords: Option<usize>,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if !tape.value(out).all_finite() {
            return Err(TensorError::NonFinite("grad_check objective"));
        }
        let mut grads = tape.backward(out)?;
        vars.iter()
            .zip(xs)
            .map(|(&v, x)| grads.take(v).unwrap_or_else(|| Tensor::zeros(x.shape().to_vec())))
            .collect::<Vec<_>>()
    };

    let mut worst = 0.0f64;
    let mut probe = xs.to_vec();
    for (k, x) in xs.iter().enumerate() {
        let n = x.len();
        let step = match max_coords {
            Some(m) if m < n => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(step.max(1)) {
            let orig = x.data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let up = eval(&f, &probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let down = eval(&f, &probe)?;
            probe[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[k].data()[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_f64([5], &[0.3, -1.2, 2.0, 0.7, -0.4]).unwrap();
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum_all(sq))
            },
            &x,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = Tensor::from_f64([1], &[f64::INFINITY]).unwrap();
        assert!(grad_check(|t, v| Ok(t.sum_all(v)), &x, DEFAULT_EPS).is_err());
    }
}
