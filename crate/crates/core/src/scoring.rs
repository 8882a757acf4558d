//! Penalty-reduced focal loss over Hough-space maps, its analytic gradient,
//! and the shaft/tip hybrid.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hough::HoughMap;

/// Targets at or above `1 - POSITIVE_TOL` count as positive cells.
pub const POSITIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    /// Focusing exponent on the prediction.
    pub alpha: f64,
    /// Penalty-reduction exponent on negative targets.
    pub beta: f64,
    /// Weight of the shaft channel in the hybrid loss.
    pub gamma: f64,
    /// Predictions are clamped to `[clamp_eps, 1 - clamp_eps]`.
    pub clamp_eps: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 4.0,
            gamma: 0.95,
            clamp_eps: 1e-6,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::validation(format!(
                "alpha and beta must be non-negative, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::validation(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::validation(format!(
                "clamp_eps must be in (0, 0.5), got {}",
                self.clamp_eps
            )));
        }
        Ok(())
    }
}

fn check_pair(pred: &Array2<f64>, target: &Array2<f64>) -> Result<()> {
    if pred.dim() != target.dim() {
        let (a, b) = (pred.dim(), target.dim());
        return Err(Error::SizeMismatch {
            expected: a.0 * a.1,
            found: b.0 * b.1,
        });
    }
    if pred.is_empty() {
        return Err(Error::validation("loss over an empty map"));
    }
    if let Some(v) = target.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::validation(format!("target value {v} outside [0, 1]")));
    }
    if let Some(v) = pred.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("prediction value {v} is not finite")));
    }
    Ok(())
}

fn cell_loss(p: f64, y: f64, params: &LossParams) -> f64 {
    let p = p.clamp(params.clamp_eps, 1.0 - params.clamp_eps);
    if y >= 1.0 - POSITIVE_TOL {
        (1.0 - p).powf(params.alpha) * p.ln()
    } else {
        (1.0 - y).powf(params.beta) * p.powf(params.alpha) * (1.0 - p).ln()
    }
}

fn cell_grad(p: f64, y: f64, params: &LossParams) -> f64 {
    let eps = params.clamp_eps;
    if p <= eps || p >= 1.0 - eps {
        return 0.0;
    }
    let a = params.alpha;
    if y >= 1.0 - POSITIVE_TOL {
        let q = 1.0 - p;
        let dq = if a == 0.0 { 0.0 } else { -a * q.powf(a - 1.0) * p.ln() };
        dq + q.powf(a) / p
    } else {
        let dp = if a == 0.0 { 0.0 } else { a * p.powf(a - 1.0) * (1.0 - p).ln() };
        (1.0 - y).powf(params.beta) * (dp - p.powf(a) / (1.0 - p))
    }
}

/// Mean focal loss of a prediction map against a soft target map.
pub fn focal_loss(pred: &Array2<f64>, target: &Array2<f64>, params: &LossParams) -> Result<f64> {
    params.validate()?;
    check_pair(pred, target)?;
    let sum = Zip::from(pred)
        .and(target)
        .fold(0.0, |acc, &p, &y| acc + cell_loss(p, y, params));
    Ok(-sum / pred.len() as f64)
}

/// Analytic gradient of [`focal_loss`] with respect to `pred`. Cells where
/// the clamp is active have zero gradient.
pub fn focal_loss_grad(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    params: &LossParams,
) -> Result<Array2<f64>> {
    params.validate()?;
    check_pair(pred, target)?;
    let scale = -1.0 / pred.len() as f64;
    Ok(Zip::from(pred)
        .and(target)
        .map_collect(|&p, &y| scale * cell_grad(p, y, params)))
}

/// `gamma * shaft_loss + (1 - gamma) * tip_loss`.
pub fn hybrid_loss(pred: &HoughMap, target: &HoughMap, params: &LossParams) -> Result<f64> {
    let shaft = focal_loss(&pred.shaft, &target.shaft, params)?;
    let tip = focal_loss(&pred.tip, &target.tip, params)?;
    Ok(params.gamma * shaft + (1.0 - params.gamma) * tip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn one(v: f64) -> Array2<f64> {
        array![[v]]
    }

    #[test]
    fn positive_cell_value() {
        let l = focal_loss(&one(0.5), &one(1.0), &LossParams::default()).unwrap();
        assert_abs_diff_eq!(l, 0.25 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.173287, epsilon = 1e-6);
    }

    #[test]
    fn negative_cell_value() {
        let l = focal_loss(&one(0.5), &one(0.0), &LossParams::default()).unwrap();
        assert_abs_diff_eq!(l, 0.25 * 2f64.ln(), epsilon = 1e-12);
        let l = focal_loss(&one(0.5), &one(0.5), &LossParams::default()).unwrap();
        assert_abs_diff_eq!(l, 0.0625 * 0.25 * 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let l = focal_loss(&one(1.0), &one(1.0), &LossParams::default()).unwrap();
        assert!((0.0..1e-10).contains(&l));
        let l = focal_loss(&one(0.0), &one(0.0), &LossParams::default()).unwrap();
        assert!((0.0..1e-10).contains(&l));
    }

    #[test]
    fn clamped_cells_have_zero_gradient() {
        let g = focal_loss_grad(&array![[0.0, 1.0]], &array![[1.0, 0.0]], &LossParams::default())
            .unwrap();
        assert_eq!(g, array![[0.0, 0.0]]);
    }

    #[test]
    fn hybrid_weights_channels() {
        let p = LossParams::default();
        let pred = HoughMap { shaft: one(0.5), tip: one(0.5) };
        let target = HoughMap { shaft: one(1.0), tip: one(0.0) };
        let h = hybrid_loss(&pred, &target, &p).unwrap();
        assert_abs_diff_eq!(h, 0.25 * 2f64.ln(), epsilon = 1e-12);
        let target = HoughMap { shaft: one(1.0), tip: one(0.5) };
        let h = hybrid_loss(&pred, &target, &p).unwrap();
        let expect = 0.95 * 0.25 * 2f64.ln() + 0.05 * 0.0625 * 0.25 * 2f64.ln();
        assert_abs_diff_eq!(h, expect, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = LossParams::default();
        assert!(focal_loss(&array![[0.5, 0.5]], &one(1.0), &p).is_err());
        assert!(focal_loss(&one(0.5), &one(1.5), &p).is_err());
        assert!(focal_loss(&one(f64::NAN), &one(1.0), &p).is_err());
        let bad = LossParams { gamma: 1.5, ..p };
        assert!(focal_loss(&one(0.5), &one(1.0), &bad).is_err());
        let bad = LossParams { alpha: -1.0, ..p };
        assert!(bad.validate().is_err());
    }
}
