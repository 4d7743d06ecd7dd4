//! Central finite-difference gradient checking.

use super::tensor::Tensor;
use crate::error::Result;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms; the rounding noise of a central difference at
/// `h = 1e-6` is around `1e-10` for O(1) losses.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error over all coordinates of all parameters.
    pub max_rel_error: f64,
    /// Worst relative error per parameter tensor.
    pub per_param: Vec<f64>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the analytic gradient returned by `f` against central
/// differences `(f(x+h) - f(x-h)) / 2h`, one coordinate at a time.
///
/// `f` must return the scalar value and one gradient vector per parameter.
pub fn grad_check<F>(params: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Vec<f64>>)>,
{
    let (_, analytic) = f(params)?;
    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut worst: f64 = 0.0;
        for j in 0..params[p].len() {
            let orig = params[p].data()[j];
            work[p].data_mut()[j] = orig + h;
            let (plus, _) = f(&work)?;
            work[p].data_mut()[j] = orig - h;
            let (minus, _) = f(&work)?;
            work[p].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic[p][j], numeric));
        }
        per_param.push(worst);
    }
    let max_rel_error = per_param.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, per_param })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    fn sum_of_squares(params: &[Tensor]) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let x = tape.param(&params[0]);
        let loss = tape.dot(x, x)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, vec![grads.wrt(x)]))
    }

    #[test]
    fn quadratic_is_exact() {
        let params = vec![Tensor::vector(vec![0.3, -1.2, 2.5])];
        let report = grad_check(&params, 1e-6, sum_of_squares).unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let params = vec![Tensor::vector(vec![1.0, 2.0])];
        let report = grad_check(&params, 1e-6, |_p| Ok((4.0, vec![vec![0.0, 0.0]]))).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }
}
