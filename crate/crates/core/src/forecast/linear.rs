//! Linear autoregression fitted through ridge-regularised normal equations.

use super::{check_series, windows, ForecasterSpec, ModelKind, Standardization, TrainedModel};
use crate::error::{Error, Result};

/// Coefficients mapped back to the original (unstandardised) scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoefficients {
    /// One weight per window position, oldest first.
    pub lags: Vec<f64>,
    pub intercept: f64,
}

impl LinearCoefficients {
    pub fn from_model(model: &TrainedModel) -> Option<Self> {
        if model.kind() != ModelKind::LinearAr {
            return None;
        }
        let Standardization { mean, std } = model.standardization;
        let (weights, bias) = model.parameters.split_at(model.lag_window());
        let sum: f64 = weights.iter().sum();
        Some(Self { lags: weights.to_vec(), intercept: mean * (1.0 - sum) + std * bias[0] })
    }

    pub fn predict(&self, window: &[f64]) -> f64 {
        self.intercept + self.lags.iter().zip(window).map(|(w, x)| w * x).sum::<f64>()
    }
}

pub fn fit_linear_ar(series: &[f64], spec: &ForecasterSpec) -> Result<TrainedModel> {
    if spec.kind != ModelKind::LinearAr {
        return Err(Error::InvalidInput(format!("spec is for `{}`, not linear_ar", spec.kind)));
    }
    check_series(series, spec)?;
    let std = Standardization::fit(series);
    let z: Vec<f64> = series.iter().map(|&v| std.apply(v)).collect();

    // Accumulate XᵀX and Xᵀy with a trailing ones column for the intercept.
    let dim = spec.lag_window + 1;
    let mut xtx = vec![0.0; dim * dim];
    let mut xty = vec![0.0; dim];
    let mut row = vec![1.0; dim];
    for (window, target) in windows(&z, spec.lag_window) {
        row[..spec.lag_window].copy_from_slice(window);
        for i in 0..dim {
            xty[i] += row[i] * target;
            for j in 0..dim {
                xtx[i * dim + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..dim {
        xtx[i * dim + i] += spec.ridge_epsilon;
    }

    let params = solve(&mut xtx, &mut xty, dim)
        .ok_or_else(|| Error::Domain("normal equations are singular; use ridge_epsilon > 0".into()))?;
    Ok(TrainedModel::new(spec.clone(), std, params, series))
}

pub(crate) fn predict_standardized(params: &[f64], window: &[f64]) -> f64 {
    let (weights, bias) = params.split_at(window.len());
    bias[0] + weights.iter().zip(window).map(|(w, x)| w * x).sum::<f64>()
}

/// Gaussian elimination with partial pivoting on a row-major `n×n` system.
fn solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() <= f64::EPSILON * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - tail) / a[r * n + r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::predict;

    #[test]
    fn arithmetic_progression_is_fit_exactly() {
        let model = fit_linear_ar(&[1.0, 3.0, 5.0, 7.0, 9.0, 11.0], &ForecasterSpec::linear(1)).unwrap();
        let c = LinearCoefficients::from_model(&model).unwrap();
        assert!((c.lags[0] - 1.0).abs() < 1e-6, "{c:?}");
        assert!((c.intercept - 2.0).abs() < 1e-6, "{c:?}");
        assert!((predict(&model, &[9.0]).unwrap() - 11.0).abs() < 1e-6);
    }

    #[test]
    fn constant_series_predicts_the_constant() {
        let model = fit_linear_ar(&[4.0; 5], &ForecasterSpec::linear(2)).unwrap();
        for w in [[4.0, 4.0], [4.0, 4.0]] {
            assert!((predict(&model, &w).unwrap() - 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn short_series_is_insufficient() {
        let err = fit_linear_ar(&[1.0, 2.0, 3.0], &ForecasterSpec::linear(2)).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { needed: 4, got: 3 }));
    }

    #[test]
    fn solver_handles_pivoting() {
        let mut a = vec![0.0, 1.0, 1.0, 0.0];
        let mut b = vec![2.0, 3.0];
        assert_eq!(solve(&mut a, &mut b, 2).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn singular_system_without_ridge_errors() {
        let spec = ForecasterSpec { ridge_epsilon: 0.0, ..ForecasterSpec::linear(2) };
        assert!(matches!(fit_linear_ar(&[4.0; 6], &spec), Err(Error::Domain(_))));
    }
}
