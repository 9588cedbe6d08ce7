//! Central-difference gradient checking.

use super::Tensor;
use crate::error::{Error, Result};

/// Worst-coordinate result of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all coordinates.
    pub max_rel_err: f64,
    /// Which parameter tensor held the worst coordinate.
    pub param_index: usize,
    /// Flat coordinate within that parameter.
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare supplied analytic gradients against central differences of a
/// deterministic scalar function.
///
/// The relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`;
/// the report carries the worst coordinate and its location.
pub fn grad_check<F>(
    loss_fn: F,
    analytic: &[Vec<f64>],
    params: &[Tensor],
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::Config(format!("grad_check step must be > 0, got {step}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} gradient sets for {} params", analytic.len(), params.len()),
        ));
    }
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        param_index: 0,
        coord: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        if analytic[pi].len() != param.numel() {
            return Err(Error::shape(
                "grad_check",
                format!(
                    "gradient {pi} has {} entries for a parameter of {}",
                    analytic[pi].len(),
                    param.numel()
                ),
            ));
        }
        for coord in 0..param.numel() {
            let base = param.data()[coord];
            let mut eval_at = |v: f64| -> Result<f64> {
                let mut data = param.data().to_vec();
                data[coord] = v;
                work[pi] = param.with_data(data)?;
                let out = loss_fn(&work)?;
                if !out.is_finite() {
                    return Err(Error::Numeric(format!(
                        "grad_check: non-finite loss at param {pi}, coord {coord}"
                    )));
                }
                Ok(out)
            };
            let plus = eval_at(base + step)?;
            let minus = eval_at(base - step)?;
            work[pi] = param.clone();
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi][coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_err {
                report = GradCheckReport {
                    max_rel_err: rel,
                    param_index: pi,
                    coord,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let params = vec![Tensor::scalar(3.0)];
        let analytic = vec![vec![6.0]];
        let report = grad_check(
            |ps| Ok(ps[0].data()[0] * ps[0].data()[0]),
            &analytic,
            &params,
            1e-3,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let params = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let analytic = vec![vec![0.0, 0.0, 0.0]];
        let report = grad_check(|_| Ok(42.0), &analytic, &params, 1e-4).unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let params = vec![Tensor::scalar(0.0)];
        let analytic = vec![vec![0.0]];
        // ln is NaN on the minus side of the central difference
        let res = grad_check(|ps| Ok(ps[0].data()[0].ln()), &analytic, &params, 1e-4);
        assert!(res.is_err());
    }

    #[test]
    fn bad_step_rejected() {
        let params = vec![Tensor::scalar(1.0)];
        assert!(grad_check(|_| Ok(0.0), &[vec![0.0]], &params, 0.0).is_err());
    }
}
