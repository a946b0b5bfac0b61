//! Central finite-difference verification of analytic gradients.

use crate::error::{AutogradError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of [`finite_difference_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    /// (parameter index, entry index) attaining the maximum.
    pub worst: (usize, usize),
    pub entries: usize,
    /// Maximum relative error per parameter, in input order.
    pub per_param: Vec<f64>,
}

/// Relative error used by the checker.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares reverse-mode gradients of `f` with central differences at `eps`.
///
/// `f` builds a scalar on the given tape from the registered parameters. It
/// must be deterministic: any randomness has to be keyed so that every call
/// reproduces the same graph.
pub fn finite_difference_check<E, Fun>(params: &[Tensor<f64>], eps: f64, f: Fun) -> Result<GradCheckReport, E>
where
    E: From<AutogradError>,
    Fun: Fn(&Tape<f64>, &[Var]) -> Result<Var, E>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    let value = tape.value(loss)?.item()?;
    if !value.is_finite() {
        return Err(AutogradError::NonFinite { param: 0, entry: 0 }.into());
    }
    let grads = tape.backward(loss)?;

    let eval = |p: usize, e: usize, v: f64| -> Result<f64, E> {
        let tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let t = if i == p { t.with_entry(e, v) } else { Ok(t.clone()) };
                t.map(|t| tape.constant(t))
            })
            .collect::<Result<_>>()?;
        let out = f(&tape, &vars)?;
        let y = tape.value(out)?.item()?;
        if !y.is_finite() {
            return Err(AutogradError::NonFinite { param: p, entry: e }.into());
        }
        Ok(y)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        entries: 0,
        per_param: vec![0.0; params.len()],
    };
    for (p, (param, var)) in params.iter().zip(&vars).enumerate() {
        let analytic = grads
            .get(*var)
            .ok_or_else(|| AutogradError::Usage(format!("no gradient for parameter {p}")))?;
        for e in 0..param.numel() {
            let x = param.data()[e];
            let numeric = (eval(p, e, x + eps)? - eval(p, e, x - eps)?) / (2.0 * eps);
            let err = relative_error(analytic.data()[e], numeric);
            report.entries += 1;
            report.per_param[p] = report.per_param[p].max(err);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (p, e);
            }
        }
    }
    Ok(report)
}
