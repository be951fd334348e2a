//! Dense Levenberg-Marquardt for small nonlinear least-squares problems.
//!
//! Cost is `0.5 * |r(x)|^2`. The Jacobian is taken by central differences.
//! Damping follows the Marquardt scaling `J^T J + lambda * diag(J^T J)`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("residuals could not be evaluated at the initial point")]
    InvalidStart,
    #[error("residuals could not be evaluated while forming the jacobian")]
    JacobianFailed,
    #[error("non-finite cost encountered")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub initial_lambda: f64,
    pub lambda_factor: f64,
    pub max_iterations: usize,
    /// Relative step size below which the solve stops.
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            lambda_factor: 10.0,
            max_iterations: 100,
            step_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub converged: bool,
}

fn cost_of(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

fn jacobian<F>(f: &F, x: &DVector<f64>, m: usize) -> Result<DMatrix<f64>, OptimError>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1e-2);
        let orig = xp[j];
        xp[j] = orig + h;
        let rp = f(&xp).ok_or(OptimError::JacobianFailed)?;
        xp[j] = orig - h;
        let rm = f(&xp).ok_or(OptimError::JacobianFailed)?;
        xp[j] = orig;
        jac.column_mut(j).copy_from(&((rp - rm) / (2.0 * h)));
    }
    Ok(jac)
}

/// Minimize `0.5 * |residuals(x)|^2` starting at `x0`.
///
/// `residuals` returns `None` where the model is undefined (e.g. a point
/// behind the camera); such trial steps are rejected like uphill steps.
pub fn levenberg_marquardt<F>(
    residuals: F,
    x0: DVector<f64>,
    opts: &LmOptions,
) -> Result<LmReport, OptimError>
where
    F: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let mut x = x0;
    let mut r = residuals(&x).ok_or(OptimError::InvalidStart)?;
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(OptimError::NonFinite);
    }
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    let mut jac = jacobian(&residuals, &x, r.len())?;
    while iterations < opts.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let diag_floor = jtj.diagonal().max() * 1e-12 + f64::MIN_POSITIVE;

        let mut accepted = false;
        let mut small_step = false;
        while lambda < 1e20 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= opts.lambda_factor;
                continue;
            };
            let delta = -chol.solve(&grad);
            let x_new = &x + &delta;
            if delta.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance) {
                small_step = true;
            }
            match residuals(&x_new) {
                Some(r_new) if cost_of(&r_new) < cost => {
                    x = x_new;
                    r = r_new;
                    cost = cost_of(&r);
                    history.push(cost);
                    lambda /= opts.lambda_factor;
                    accepted = true;
                    break;
                }
                _ => {
                    if small_step {
                        break;
                    }
                    lambda *= opts.lambda_factor;
                }
            }
        }
        if small_step || !accepted {
            converged = true;
            break;
        }
        jac = jacobian(&residuals, &x, r.len())?;
    }

    Ok(LmReport {
        params: x,
        initial_cost,
        final_cost: cost,
        iterations,
        cost_history: history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_decay() {
        // y = a * exp(-b t), exact data
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let res = |p: &DVector<f64>| {
            Some(DVector::from_iterator(
                ts.len(),
                ts.iter()
                    .zip(&ys)
                    .map(|(t, y)| p[0] * (-p[1] * t).exp() - y),
            ))
        };
        let rep = levenberg_marquardt(res, DVector::from_vec(vec![1.0, 0.1]), &LmOptions::default())
            .unwrap();
        assert!((rep.params[0] - 3.0).abs() < 1e-9);
        assert!((rep.params[1] - 0.7).abs() < 1e-9);
        assert!(rep.cost_history.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rosenbrock_converges() {
        let res = |p: &DVector<f64>| {
            Some(DVector::from_vec(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]))
        };
        let rep =
            levenberg_marquardt(res, DVector::from_vec(vec![-1.2, 1.0]), &LmOptions::default())
                .unwrap();
        assert!((rep.params[0] - 1.0).abs() < 1e-8, "{:?}", rep.params);
        assert!(rep.final_cost < 1e-16);
    }

    #[test]
    fn undefined_start_is_an_error() {
        let res = |_: &DVector<f64>| None;
        let err = levenberg_marquardt(res, DVector::zeros(2), &LmOptions::default()).unwrap_err();
        assert_eq!(err, OptimError::InvalidStart);
    }
}
