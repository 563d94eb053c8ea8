use crate::error::{Error, Result};
use crate::numkit::tape::{Tape, Var};
use crate::numkit::tensor::Tensor;

/// Outcome of a central finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter, flat index) of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// `|a − n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `f` at `params`.
pub fn finite_diff_check(
    f: impl Fn(&[Tensor]) -> Result<f64>,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {eps}")));
    }
    if analytic.len() != params.len()
        || analytic.iter().zip(params).any(|(a, p)| a.shape() != p.shape())
    {
        return Err(Error::shape("finite_diff_check", "gradient shapes differ from parameters"));
    }

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.numel() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let up = f(&work)?;
            work[pi].data_mut()[k] = orig - eps;
            let down = f(&work)?;
            work[pi].data_mut()[k] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("objective at parameter {pi}[{k}]")));
            }
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(grad.data()[k], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pi, k);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

/// Gradient-checks a scalar function built on a fresh tape from leaf `params`.
pub fn check_tape_fn(
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
    params: &[Tensor],
    eps: f64,
) -> Result<GradCheckReport> {
    let run = |p: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = p
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = run(params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    finite_diff_check(
        |p| {
            let (tape, _, out) = run(p)?;
            Ok(tape.value(out).data()[0])
        },
        params,
        &analytic,
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = [Tensor::scalar(3.0)];
        let r = finite_diff_check(|p| Ok(p[0].data()[0].powi(2)), &x, &[Tensor::scalar(6.0)], 1e-5)
            .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn constant_map_has_zero_error() {
        let x = [Tensor::ones(&[2, 2])];
        let r = finite_diff_check(|_| Ok(4.2), &x, &[Tensor::zeros(&[2, 2])], 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.coordinates, 4);
    }

    #[test]
    fn rejects_bad_step() {
        let x = [Tensor::scalar(1.0)];
        assert!(finite_diff_check(|_| Ok(0.0), &x, &[Tensor::scalar(0.0)], 0.0).is_err());
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let x = [Tensor::scalar(1.0)];
        let r = finite_diff_check(|_| Ok(f64::NAN), &x, &[Tensor::scalar(0.0)], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
