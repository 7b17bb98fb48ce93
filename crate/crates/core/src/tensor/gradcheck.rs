use super::{Tape, Tensor, Var};
use crate::error::{DragError, Result};

/// Compares the tape gradient of a scalar function with central differences.
///
/// Returns the largest per-coordinate relative error, where the denominator
/// is `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if eps <= 0.0 || !eps.is_finite() {
        return Err(DragError::Numeric(format!("eps must be positive, got {eps}")));
    }
    let analytic = {
        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let y = f(&tape, xv)?;
        y.backward()?.get_or_zeros(xv)
    };
    let eval = |probe: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let xv = tape.constant(probe.clone());
        Ok(f(&tape, xv)?.item())
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_tight() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let err = finite_difference_check(|_, x| x.square()?.sum(), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn l1_away_from_kinks() {
        let x = Tensor::from_vec(vec![1.0, -1.0]).unwrap();
        let err = finite_difference_check(|_, x| x.l1_norm(), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let x = Tensor::from_vec(vec![1.0]).unwrap();
        assert!(finite_difference_check(|_, x| x.sum(), &x, 0.0).is_err());
    }
}
