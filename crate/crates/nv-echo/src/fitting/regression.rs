//! Closed-form (weighted) ordinary least-squares line fit.

use crate::error::{Error, Result};

/// y = slope·x + intercept with goodness and coefficient standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination, clamped to [0, 1]; defined as 0 for a
    /// constant response.
    pub r_squared: f64,
    pub slope_std_error: f64,
    pub intercept_std_error: f64,
}

/// Exact normal-equation solution of the (weighted) least-squares line.
pub fn regress_linear(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<RegressionResult> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::data(format!("x and y lengths differ: {n} vs {}", y.len())));
    }
    if n < 3 {
        return Err(Error::data(format!("regression requires at least 3 points, got {n}")));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::data("weights length mismatch".to_string()));
            }
            if w.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
                return Err(Error::domain("weights must be finite and > 0".to_string()));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite regression input".to_string()));
    }

    let sw: f64 = w.iter().sum();
    let xbar: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi).sum::<f64>() / sw;
    let ybar: f64 = y.iter().zip(&w).map(|(yi, wi)| wi * yi).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * (xi - xbar) * (xi - xbar)).sum();
    let sxy: f64 =
        x.iter().zip(y.iter()).zip(&w).map(|((xi, yi), wi)| wi * (xi - xbar) * (yi - ybar)).sum();

    let x_scale: f64 = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if sxx <= sw * (1e-14 * x_scale).powi(2) {
        return Err(Error::domain("degenerate regression: x values are all equal".to_string()));
    }

    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;

    let ss_res: f64 = x
        .iter()
        .zip(y.iter())
        .zip(&w)
        .map(|((xi, yi), wi)| {
            let r = yi - (intercept + slope * xi);
            wi * r * r
        })
        .sum();
    let ss_tot: f64 = y.iter().zip(&w).map(|(yi, wi)| wi * (yi - ybar) * (yi - ybar)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 0.0 };

    let s2 = ss_res / (n as f64 - 2.0);
    let slope_std_error = (s2 / sxx).sqrt();
    let intercept_std_error = (s2 * (1.0 / sw + xbar * xbar / sxx)).sqrt();

    Ok(RegressionResult { slope, intercept, r_squared, slope_std_error, intercept_std_error })
}
