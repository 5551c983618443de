//! Central finite-difference check of analytic gradients.

use super::MlpNetwork;
use crate::Result;

/// Anything whose parameters can be read and overwritten as one flat vector.
pub trait Parameterized {
    fn flat_params(&self) -> Vec<f64>;
    fn set_flat_params(&mut self, params: &[f64]) -> Result<()>;
}

impl Parameterized for MlpNetwork {
    fn flat_params(&self) -> Vec<f64> {
        MlpNetwork::flat_params(self)
    }

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        MlpNetwork::set_flat_params(self, params)
    }
}

/// Denominator floor for the relative error, so gradients that are zero up to
/// roundoff do not read as large relative disagreements.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub param_count: usize,
    pub max_rel_error: f64,
    /// Index of the parameter with the largest relative error.
    pub worst_index: Option<usize>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences `(L(θ + h·eᵢ) − L(θ − h·eᵢ)) / 2h` on every parameter.
///
/// `loss_fn` returns `(loss, flat gradient)` at the target's current
/// parameters. The target's parameters are restored before returning.
pub fn finite_diff_check<M, F>(
    target: &mut M,
    mut loss_fn: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    M: Parameterized + ?Sized,
    F: FnMut(&mut M) -> Result<(f64, Vec<f64>)>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let original = target.flat_params();
    let (_, analytic) = loss_fn(target)?;
    if analytic.len() != original.len() {
        return Err(crate::Error::dims(
            "finite_diff_check gradient",
            original.len(),
            analytic.len(),
        ));
    }

    let mut report = GradCheckReport {
        param_count: original.len(),
        max_rel_error: 0.0,
        worst_index: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        tolerance: tol,
        passed: true,
    };
    let mut probe = original.clone();
    for i in 0..original.len() {
        probe[i] = original[i] + h;
        target.set_flat_params(&probe)?;
        let (plus, _) = loss_fn(target)?;
        probe[i] = original[i] - h;
        target.set_flat_params(&probe)?;
        let (minus, _) = loss_fn(target)?;
        probe[i] = original[i];

        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = err;
            report.worst_index = Some(i);
            report.analytic_at_worst = analytic[i];
            report.numeric_at_worst = numeric;
        }
    }
    target.set_flat_params(&original)?;
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
