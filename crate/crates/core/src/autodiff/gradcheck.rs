use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared on an absolute scale: the relative
/// error is `|analytic − numeric| / max(|analytic|, |numeric|, REL_ERR_FLOOR)`.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(element, analytic, numeric)` for every element above tolerance.
    pub failures: Vec<(usize, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub evaluations: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.failures.is_empty())
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape's gradient of a scalar function against central
/// differences `(f(θ+h) − f(θ−h)) / 2h`, element by element, for every
/// tensor in `params`. Failures are listed in the report, not returned as
/// errors.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        if out.shape().iter().product::<usize>() != 1 {
            return Err(Error::Contract("grad_check needs a scalar function".into()));
        }
        Ok(out.item())
    };

    let analytic: Vec<Tensor> = {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = params.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&g, &vars)?;
        g.backward(out)?;
        vars.iter().map(|&v| g.grad(v)).collect()
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        tol,
        evaluations: 1,
    };
    for (index, grad) in analytic.iter().enumerate() {
        let mut check = ParamCheck {
            index,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            failures: Vec::new(),
        };
        for e in 0..grad.numel() {
            let orig = work[index].data()[e];
            work[index].data_mut()[e] = orig + h;
            let plus = eval(&work)?;
            work[index].data_mut()[e] = orig - h;
            let minus = eval(&work)?;
            work[index].data_mut()[e] = orig;
            report.evaluations += 2;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[e];
            let rel = relative_error(a, numeric);
            check.max_rel_err = check.max_rel_err.max(rel);
            check.max_abs_err = check.max_abs_err.max((a - numeric).abs());
            if !(rel < tol) {
                check.failures.push((e, a, numeric));
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
