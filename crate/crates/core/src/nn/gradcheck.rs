//! Central finite-difference gradient oracle.

use super::DenseNet;
use crate::error::{Error, Result};

/// Flat, indexable view over a model's trainable parameters.
pub trait ParamSet {
    fn param_count(&self) -> usize;
    fn param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
}

impl ParamSet for DenseNet {
    fn param_count(&self) -> usize {
        DenseNet::param_count(self)
    }

    fn param(&self, index: usize) -> f64 {
        DenseNet::param(self, index)
    }

    fn set_param(&mut self, index: usize, value: f64) {
        DenseNet::set_param(self, index, value)
    }
}

/// Denominator floor for the relative error, so parameters whose true
/// gradient is zero compare on absolute error instead of 0/0.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Compares `analytic` (flat, in [`ParamSet`] order) against central
/// differences of `loss` and returns the worst relative error
/// `|a - n| / max(|a|, |n|, floor)`.
///
/// Every parameter is restored to its original value before returning.
pub fn finite_diff_check<P, F>(model: &mut P, analytic: &[f64], epsilon: f64, mut loss: F) -> Result<f64>
where
    P: ParamSet + ?Sized,
    F: FnMut(&P) -> f64,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1e-2], got {epsilon}")));
    }
    if analytic.len() != model.param_count() {
        return Err(Error::invalid(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            model.param_count()
        )));
    }
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = model.param(i);
        model.set_param(i, orig + epsilon);
        let plus = loss(model);
        model.set_param(i, orig - epsilon);
        let minus = loss(model);
        model.set_param(i, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: "loss at perturbed point".into(),
                index: i,
            });
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
