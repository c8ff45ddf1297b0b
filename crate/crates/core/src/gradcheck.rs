//! Central finite-difference check of tape gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Worst disagreement found by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat entry index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
    /// Worst relative error per parameter tensor, in parameter order.
    pub per_param: Vec<(String, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares the analytic gradient of `loss` against `(f(θ+h) - f(θ-h)) / 2h`
/// for every entry of every parameter.
///
/// `loss` must evaluate the objective and back-propagate it into the grad
/// slots of the set it is given (as a training step would).
pub fn grad_check<F>(params: &mut ParamSet, h: f64, loss: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamSet) -> Result<f64>,
{
    let ids: Vec<ParamId> = params.ids().collect();
    grad_check_subset(params, &ids, h, loss)
}

/// Like [`grad_check`] but restricted to `ids`.
pub fn grad_check_subset<F>(
    params: &mut ParamSet,
    ids: &[ParamId],
    h: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamSet) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Input(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut eval = |ps: &mut ParamSet| -> Result<f64> {
        let v = loss(ps)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    params.zero_grad();
    eval(params)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            params
                .get(id)
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_default()
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
        per_param: Vec::new(),
    };
    for (k, &id) in ids.iter().enumerate() {
        let mut param_worst = 0.0f64;
        for j in 0..params.get(id).numel() {
            let orig = params.get(id).data()[j];
            params.get_mut(id).data_mut()[j] = orig + h;
            let plus = eval(params)?;
            params.get_mut(id).data_mut()[j] = orig - h;
            let minus = eval(params)?;
            params.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k].get(j).copied().unwrap_or(0.0);
            let err = relative_error(a, numeric);
            report.entries_checked += 1;
            param_worst = param_worst.max(err);
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some((String::from(params.name(id)), j));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        report
            .per_param
            .push((String::from(params.name(id)), param_worst));
    }
    params.zero_grad();
    Ok(report)
}
