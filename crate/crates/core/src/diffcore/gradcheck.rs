//! Central finite-difference checks against tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Maximum over all coordinates of all `inputs` of
/// `|analytic - central_difference| / max(1, |analytic|)`.
///
/// `build` records a scalar function of the inputs on a fresh tape and returns
/// its root. It is called once for the analytic gradient and twice per
/// coordinate for the numeric one.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let root = build(&mut tape, &vars)?;
        let v = tape.scalar(root)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("gradient check evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let root = build(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (which, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).ok_or(Error::UnknownVar(var.index()))?;
        for k in 0..inputs[which].len() {
            let orig = inputs[which].data()[k];
            probe[which].data_mut()[k] = orig + step;
            let plus = eval(&probe)?;
            probe[which].data_mut()[k] = orig - step;
            let minus = eval(&probe)?;
            probe[which].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Single-input form of [`check_gradients`].
pub fn check_gradient<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    check_gradients(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let err = check_gradient(
            |t, x| {
                let sq = t.square(x)?;
                t.sum(sq)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn tanh_sum() {
        let x = Tensor::vector(vec![0.3]).unwrap();
        let err = check_gradient(
            |t, x| {
                let y = t.tanh(x)?;
                t.sum(y)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::vector(vec![0.3, -1.0]).unwrap();
        let err = check_gradient(|t, _| Ok(t.constant(Tensor::scalar(2.0))), &x, 1e-6).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let x = Tensor::vector(vec![800.0]).unwrap();
        let r = check_gradient(
            |t, x| {
                let e = t.exp(x)?;
                t.sum(e)
            },
            &x,
            1e-6,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
