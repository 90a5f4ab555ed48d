//! Damped least-squares (Levenberg-Marquardt) solver on weighted
//! residuals with analytic Jacobians and bound projection.

use crate::error::{Error, Result};

use super::{DecayTrace, FitResult, FittedParam, ModelKind, MIN_FIT_POINTS};

/// A parameterized curve with analytic partial derivatives.
pub trait CurveModel {
    fn param_names(&self) -> &[&'static str];
    fn param_units(&self) -> &[&'static str];
    fn eval(&self, tau: f64, params: &[f64]) -> f64;
    /// Writes ∂f/∂p_j at (tau, params) into `out`.
    fn partials(&self, tau: f64, params: &[f64], out: &mut [f64]);
}

const MAX_ITERATIONS: usize = 500;
const STEP_TOL: f64 = 1e-8;
const COST_TOL: f64 = 1e-10;

/// Solve A x = b for a small dense system, in place, with partial
/// pivoting. Returns None when the matrix is numerically singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let (pivot, mag) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if !mag.is_finite() || mag < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *dst -= factor * src;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
        if !x[row].is_finite() {
            return None;
        }
    }
    Some(x)
}

fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let x = solve(a.to_vec(), e)?;
        for row in 0..n {
            inv[row][col] = x[row];
        }
    }
    Some(inv)
}

struct Problem<'a> {
    trace: &'a DecayTrace,
    model: &'a dyn CurveModel,
    weights: Vec<f64>,
}

impl Problem<'_> {
    /// Weighted residuals r_i = w_i (y_i − f_i); None on any non-finite
    /// model value.
    fn residuals(&self, p: &[f64]) -> Option<Vec<f64>> {
        let mut r = Vec::with_capacity(self.trace.points.len());
        for (pt, &w) in self.trace.points.iter().zip(&self.weights) {
            let f = self.model.eval(pt.tau, p);
            if !f.is_finite() {
                return None;
            }
            r.push(w * (pt.signal - f));
        }
        Some(r)
    }

    /// Gauss-Newton normal matrix JᵀJ and gradient Jᵀr, with
    /// J_ij = −w_i ∂f/∂p_j.
    fn normal_system(&self, p: &[f64], r: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let k = p.len();
        let mut jtj = vec![vec![0.0; k]; k];
        let mut jtr = vec![0.0; k];
        let mut row = vec![0.0; k];
        for (i, (pt, &w)) in self.trace.points.iter().zip(&self.weights).enumerate() {
            self.model.partials(pt.tau, p, &mut row);
            for j in 0..k {
                let jij = -w * row[j];
                jtr[j] += jij * r[i];
                for l in j..k {
                    jtj[j][l] += jij * (-w * row[l]);
                }
            }
        }
        for j in 1..k {
            let (upper_rows, lower) = jtj.split_at_mut(j);
            for (l, upper_row) in upper_rows.iter().enumerate() {
                lower[0][l] = upper_row[j];
            }
        }
        (jtj, jtr)
    }
}

/// Damped least-squares fit of `model` to `trace`.
///
/// `init` must lie within `bounds`; steps are projected back into the
/// bounds box. Convergence requires relative step < 1e-8 and relative
/// cost change < 1e-10 within 500 iterations; otherwise the result is
/// flagged `converged = false`.
pub fn fit_curve(
    trace: &DecayTrace,
    model: &dyn CurveModel,
    kind: ModelKind,
    init: &[f64],
    bounds: &[(f64, f64)],
) -> Result<FitResult> {
    let k = init.len();
    if k == 0 || k != bounds.len() || k != model.param_names().len() {
        return Err(Error::data("parameter vector, bounds, and model size mismatch".to_string()));
    }
    if trace.points.len() < MIN_FIT_POINTS {
        return Err(Error::data(format!(
            "fit requires at least {MIN_FIT_POINTS} points, got {}",
            trace.points.len()
        )));
    }
    for (j, (&p, &(lo, hi))) in init.iter().zip(bounds).enumerate() {
        if !(lo <= p && p <= hi) {
            return Err(Error::domain(format!("init[{j}] = {p} outside bounds [{lo}, {hi}]")));
        }
    }

    let weights: Vec<f64> =
        trace.points.iter().map(|pt| pt.sigma.map(|s| 1.0 / s).unwrap_or(1.0)).collect();
    let problem = Problem { trace, model, weights };

    let mut p = init.to_vec();
    let mut r = problem
        .residuals(&p)
        .ok_or_else(|| Error::data("model produced NaN residual at the initial point".to_string()))?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("NaN residual: trace contains non-finite data".to_string()));
    }
    let mut cost: f64 = r.iter().map(|v| v * v).sum();

    let mut mu = 1e-3;
    let mut converged = false;
    let mut message: Option<String> = None;
    let mut iterations = 0;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        let (jtj, jtr) = problem.normal_system(&p, &r);

        // (JtJ + mu diag(JtJ)) delta = -Jt r
        let mut damped = jtj.clone();
        for j in 0..k {
            let d = jtj[j][j];
            damped[j][j] = d + mu * d.max(1e-30);
        }
        let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
        let delta = match solve(damped, rhs) {
            Some(d) => d,
            None => {
                message = Some("singular normal matrix".to_string());
                break;
            }
        };

        let trial: Vec<f64> = p
            .iter()
            .zip(&delta)
            .zip(bounds)
            .map(|((&pi, &di), &(lo, hi))| (pi + di).clamp(lo, hi))
            .collect();
        let trial_r = problem.residuals(&trial);
        let trial_cost: f64 =
            trial_r.as_ref().map(|r| r.iter().map(|v| v * v).sum()).unwrap_or(f64::INFINITY);

        if trial_cost <= cost {
            let step_norm: f64 =
                trial.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let p_norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel_step = step_norm / p_norm.max(1e-300);
            let rel_cost = (cost - trial_cost) / cost.max(1e-300);

            p = trial;
            r = trial_r.unwrap();
            cost = trial_cost;
            mu = (mu / 3.0).max(1e-12);

            if (rel_step < STEP_TOL && rel_cost < COST_TOL) || cost == 0.0 {
                converged = true;
                break;
            }
        } else {
            mu *= 2.0;
            if mu > 1e12 {
                message = Some("damping overflow: no descent direction".to_string());
                break;
            }
        }
    }
    if !converged && message.is_none() {
        message = Some("maximum iterations reached".to_string());
    }

    // Covariance: residual-variance-scaled inverse of the (undamped)
    // normal matrix at the solution.
    let (jtj, _) = problem.normal_system(&p, &r);
    let n = trace.points.len();
    let dof = (n.saturating_sub(k)).max(1) as f64;
    let s2 = cost / dof;
    let covariance = match invert(&jtj) {
        Some(inv) => {
            inv.iter().map(|row| row.iter().map(|v| v * s2).collect()).collect::<Vec<Vec<f64>>>()
        }
        None => {
            let note = "covariance unavailable: singular normal matrix".to_string();
            message = Some(match message.take() {
                Some(m) => format!("{m}; {note}"),
                None => note,
            });
            vec![vec![0.0; k]; k]
        }
    };

    let params = model
        .param_names()
        .iter()
        .zip(model.param_units())
        .zip(&p)
        .enumerate()
        .map(|(j, ((name, unit), &value))| FittedParam {
            name: name.to_string(),
            unit: unit.to_string(),
            value,
            std_error: covariance[j][j].max(0.0).sqrt(),
        })
        .collect();

    Ok(FitResult {
        model: kind,
        params,
        covariance,
        residual_norm: cost,
        n_iterations: iterations,
        converged,
        message,
        sample_id: trace.sample_id.clone(),
    })
}
