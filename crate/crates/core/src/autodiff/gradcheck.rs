//! Central finite-difference gradient checking.

use super::{backward, Graph, ParamGrads, ParameterStore, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Below this magnitude the absolute error is used instead of the relative one.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tol: f64,
    pub checked: usize,
    pub max_error: f64,
    pub worst: Option<GradCheckEntry>,
    pub failures: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_error < self.tol
    }
}

/// `|a - n| / max(|a|, |n|)`, falling back to `|a - n|` when both are tiny.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < ABSOLUTE_FLOOR {
        diff
    } else {
        diff / scale
    }
}

/// Compares `analytic` against central differences of `eval` at every
/// coordinate of every parameter in `params`.
pub fn check_gradients<F>(
    params: &ParameterStore,
    analytic: &ParamGrads,
    eval: F,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<f64>,
{
    let mut report = GradCheckReport {
        tol,
        ..Default::default()
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name)?.numel();
        for index in 0..n {
            let original = params.get(&name)?.data()[index];
            probe.get_mut(&name)?.data_mut()[index] = original + step;
            let plus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[index] = original - step;
            let minus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[index] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.get(&name).map_or(0.0, |t| t.data()[index]);
            let error = relative_error(a, numeric);
            let entry = GradCheckEntry {
                param: name.clone(),
                index,
                analytic: a,
                numeric,
                error,
            };
            report.checked += 1;
            if error.is_nan() || error >= tol {
                report.failures.push(entry.clone());
            }
            if error > report.max_error || report.worst.is_none() || error.is_nan() {
                report.max_error = if error.is_nan() { f64::INFINITY } else { error };
                report.worst = Some(entry);
            }
        }
    }
    Ok(report)
}

/// Gradient check of a loss built by `f` against the graph's own backward pass.
pub fn grad_check<F>(f: F, params: &ParameterStore, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let analytic = backward(&g, loss)?.into_params();
    let eval = |p: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, p)?;
        Ok(g.scalar_value(loss))
    };
    check_gradients(params, &analytic, eval, step, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn quadratic_store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("x", Tensor::vector(vec![0.5, -1.0, 2.0]));
        s.insert(
            "a",
            Tensor::matrix(3, 3, vec![2.0, 0.5, 0.0, 0.5, 1.0, 0.3, 0.0, 0.3, 3.0]).unwrap(),
        );
        s
    }

    // x^T A x
    fn quadratic(g: &mut Graph, p: &ParameterStore) -> Result<Var> {
        let x = g.param(p, "x")?;
        let a = g.param(p, "a")?;
        let ax = g.matmul(a, x)?;
        let prod = g.mul(x, ax)?;
        Ok(g.sum(prod))
    }

    #[test]
    fn quadratic_form_passes() {
        let report = grad_check(quadratic, &quadratic_store(), DEFAULT_STEP, DEFAULT_TOL).unwrap();
        assert!(report.passed());
        assert!(report.max_error < 1e-7, "max error {}", report.max_error);
        assert_eq!(report.checked, 12);
    }

    #[test]
    fn wrong_gradient_fails() {
        let params = quadratic_store();
        let mut g = Graph::new();
        let loss = quadratic(&mut g, &params).unwrap();
        let mut wrong = backward(&g, loss).unwrap().into_params();
        wrong.scale(2.0);
        let eval = |p: &ParameterStore| {
            let mut g = Graph::new();
            let l = quadratic(&mut g, p)?;
            Ok(g.scalar_value(l))
        };
        let report = check_gradients(&params, &wrong, eval, DEFAULT_STEP, DEFAULT_TOL).unwrap();
        assert!(!report.passed());
        assert!(!report.failures.is_empty());
    }

    #[test]
    fn relative_error_uses_absolute_floor() {
        assert_eq!(relative_error(1e-10, 0.0), 1e-10);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
