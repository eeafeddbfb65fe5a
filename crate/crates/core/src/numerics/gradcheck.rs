//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::numerics::{ParamStore, Tape, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Largest analytic gradient magnitude seen.
    pub max_abs_grad: f64,
    /// `(param name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Compares tape gradients of the scalar returned by `f` against central
/// differences with the given `step`, over every trainable entry of `params`.
///
/// `params` is restored to its original values before returning; its `grad`
/// fields are left untouched.
pub fn grad_check<S, F>(params: &mut ParamStore<S>, f: F, step: S, tol: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: for<'p> Fn(&mut Tape<'p, S>, &'p ParamStore<S>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = f(&mut tape, params)?;
        tape.backward(loss)?
    };

    let eval = |params: &ParamStore<S>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, params)?;
        Ok(tape.value(loss).item()?.as_f64())
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        max_abs_grad: 0.0,
        worst: None,
        entries_checked: 0,
        tolerance: tol,
    };
    let two_h = 2.0 * step.as_f64();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        if !params.get(id).trainable {
            continue;
        }
        let n = params.get(id).value.len();
        for i in 0..n {
            let orig = params.get(id).value.data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + step;
            let plus = eval(params);
            params.get_mut(id).value.data_mut()[i] = orig - step;
            let minus = eval(params);
            params.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / two_h;
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i].as_f64());
            let abs_err = (a - numeric).abs();
            let rel = abs_err / a.abs().max(numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            report.max_abs_grad = report.max_abs_grad.max(a.abs());
            report.max_abs_err = report.max_abs_err.max(abs_err);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((params.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
