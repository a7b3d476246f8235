//! Least-squares fits in log coordinates.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("value {value} at L = {side} is not positive")]
    NonPositive { side: f64, value: f64 },
    #[error("abscissae are all equal")]
    Degenerate,
}

/// `y = intercept + slope x` by ordinary least squares.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    /// 95% confidence interval of the slope (Student t with `n - 2` degrees of freedom).
    pub slope_ci: (f64, f64),
    pub residual_sum_squares: f64,
    pub points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit, FitError> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return Err(FitError::TooFewPoints { needed: 2, got: n });
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::Degenerate);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let (se, ci) = if n > 2 {
        let se = (rss / (n - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        (se, (slope - t * se, slope + t * se))
    } else {
        (f64::INFINITY, (f64::NEG_INFINITY, f64::INFINITY))
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_std_error: se,
        slope_ci: ci,
        residual_sum_squares: rss,
        points: n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum RateModel {
    /// `v = c L^s`
    PurePower,
    /// `v = c L^s (ln L)^{1/2}`
    PowerWithSqrtLog,
    /// `v = c L^s (ln L)^k`
    PowerWithLogPower { k: f64 },
}

impl RateModel {
    pub fn log_power(&self) -> f64 {
        match self {
            Self::PurePower => 0.0,
            Self::PowerWithSqrtLog => 0.5,
            Self::PowerWithLogPower { k } => *k,
        }
    }
}

/// Fitted `L`-exponent `s` of a rate model. The exponent in `eps = 1/L` is `-s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub model: RateModel,
    pub exponent: f64,
    pub ci: (f64, f64),
    pub prefactor: f64,
    /// Residual sum of squares of `ln v` against the model.
    pub residual: f64,
}

impl RateFit {
    pub fn epsilon_exponent(&self) -> f64 {
        -self.exponent
    }
}

/// Least squares of `ln v - k ln ln L` against `ln L`.
pub fn fit_rate(pairs: &[(f64, f64)], model: RateModel) -> Result<RateFit, FitError> {
    if pairs.len() < 3 {
        return Err(FitError::TooFewPoints {
            needed: 3,
            got: pairs.len(),
        });
    }
    if let Some(&(side, value)) = pairs.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(FitError::NonPositive { side, value });
    }
    let k = model.log_power();
    let xs: Vec<f64> = pairs.iter().map(|(l, _)| l.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(l, v)| v.ln() - k * l.ln().ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(RateFit {
        model,
        exponent: fit.slope,
        ci: fit.slope_ci,
        prefactor: fit.intercept.exp(),
        residual: fit.residual_sum_squares,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
        [8.0, 16.0, 32.0, 64.0].into_iter().map(|l| (l, f(l))).collect()
    }

    #[test]
    fn exact_power_law() {
        let fit = fit_rate(&synthetic(|l| 3.0 / l), RateModel::PurePower).unwrap();
        assert!((fit.exponent + 1.0).abs() < 1e-10);
        assert!((fit.prefactor - 3.0).abs() < 1e-9);
        assert!(fit.residual < 1e-20);
    }

    #[test]
    fn sqrt_log_data() {
        let data = synthetic(|l| 2.0 * l.ln().sqrt() / l);
        let corrected = fit_rate(&data, RateModel::PowerWithSqrtLog).unwrap();
        assert!((corrected.exponent + 1.0).abs() < 1e-10);
        let pure = fit_rate(&data, RateModel::PurePower).unwrap();
        // The growing log factor flattens the apparent decay.
        assert!(pure.exponent > -1.0);
        assert!(corrected.residual <= pure.residual);
        let general = fit_rate(&data, RateModel::PowerWithLogPower { k: 0.5 }).unwrap();
        assert!((general.exponent - corrected.exponent).abs() < 1e-14);
    }

    #[test]
    fn constant_data_and_errors() {
        let fit = fit_rate(&synthetic(|_| 0.7), RateModel::PurePower).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
        assert!(matches!(
            fit_rate(&[(8.0, 1.0), (16.0, 0.0), (32.0, 1.0)], RateModel::PurePower),
            Err(FitError::NonPositive { .. })
        ));
        assert!(matches!(
            fit_rate(&[(8.0, 1.0), (16.0, 1.0)], RateModel::PurePower),
            Err(FitError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn confidence_interval_uses_student_t() {
        // Oracle: y = x + (+e, -2e, +e) residuals; slope exactly 1, t(0.975, 1) = 12.706.
        let e = 0.01;
        let fit = linear_fit(&[0.0, 1.0, 2.0], &[e, 1.0 - 2.0 * e, 2.0 + e]).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-14);
        let se = (6.0 * e * e / 1.0 / 2.0f64).sqrt();
        assert!((fit.slope_std_error - se).abs() < 1e-14);
        assert!((fit.slope_ci.1 - 1.0 - 12.706204736 * se).abs() < 1e-8);
    }
}
