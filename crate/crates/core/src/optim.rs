//! Box-constrained nonlinear least squares.
//!
//! A projected Levenberg-Marquardt method: each iteration solves the damped
//! Gauss-Newton system over the variables not pinned at a bound, projects the
//! step back into the box and accepts it only if the sum of squares decreases.
//! The iterate is therefore always feasible and the cost never increases.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A residual function `r(x)` whose sum of squares is minimized.
pub trait LeastSquaresProblem {
    fn dim(&self) -> usize;
    fn residual_len(&self) -> usize;
    /// Writes `r(x)` and, when requested, the Jacobian `dr/dx` (residual_len x dim).
    fn evaluate(&self, x: &DVector<f64>, r: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Projected gradient norm fell below the tolerance.
    Converged,
    /// No further decrease is possible at machine precision.
    Stalled,
    MaxIterations,
    /// The wall-clock deadline passed; the best iterate so far is returned.
    BudgetExhausted,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, SolveStatus::Converged | SolveStatus::Stalled)
    }
}

#[derive(Clone, Debug)]
pub struct LsqOptions {
    pub max_iters: usize,
    /// Tolerance on the Euclidean norm of the projected gradient of `||r||^2`.
    pub grad_tol: f64,
    pub deadline: Option<Instant>,
}

impl Default for LsqOptions {
    fn default() -> Self {
        LsqOptions {
            max_iters: 200,
            grad_tol: 1e-9,
            deadline: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsqReport {
    pub x: DVector<f64>,
    /// `||r(x)||^2` at the returned point.
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub projected_gradient_norm: f64,
}

pub fn project(x: &mut DVector<f64>, lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

/// Norm of `x - P(x - g)`, the first-order stationarity measure on a box.
pub fn projected_gradient_norm(x: &DVector<f64>, g: &DVector<f64>, lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g.iter())
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| {
            let d = xi - (xi - gi).clamp(lo, hi);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

const MU_MAX: f64 = 1e14;

pub fn minimize_bounded<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    opts: &LsqOptions,
) -> LsqReport {
    let n = problem.dim();
    let m = problem.residual_len();
    assert_eq!(x0.len(), n);
    assert_eq!(lower.len(), n);
    assert_eq!(upper.len(), n);

    let mut x = x0.clone();
    project(&mut x, lower, upper);
    let mut r = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, n);
    problem.evaluate(&x, &mut r, Some(&mut jac));
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let mut grad = 2.0 * jac.tr_mul(&r);

    let mut r_trial = DVector::zeros(m);
    let mut mu = {
        let jtj_diag = jac.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
        1e-3 * jtj_diag.max(1e-12)
    };
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let pg = projected_gradient_norm(&x, &grad, lower, upper);
        if pg <= opts.grad_tol {
            status = SolveStatus::Converged;
            break;
        }
        if deadline_passed(opts) {
            status = SolveStatus::BudgetExhausted;
            break;
        }
        iterations += 1;

        // Variables held at a bound by the gradient stay fixed for this step.
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let at_lo = x[i] <= lower[i] && grad[i] > 0.0;
                let at_hi = x[i] >= upper[i] && grad[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        if free.is_empty() {
            status = SolveStatus::Converged;
            break;
        }
        let jf = jac.select_columns(&free);
        let normal = jf.tr_mul(&jf);
        let rhs = -jf.tr_mul(&r);

        let mut accepted = false;
        while mu <= MU_MAX {
            let mut damped = normal.clone();
            for i in 0..free.len() {
                damped[(i, i)] += mu;
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let step = chol.solve(&rhs);
            let mut trial = x.clone();
            for (k, &i) in free.iter().enumerate() {
                trial[i] += step[k];
            }
            project(&mut trial, lower, upper);
            if (&trial - &x).amax() <= f64::EPSILON * (1.0 + x.amax()) {
                break;
            }
            problem.evaluate(&trial, &mut r_trial, None);
            let trial_cost = r_trial.norm_squared();
            if trial_cost.is_finite() && trial_cost < cost {
                x = trial;
                cost = trial_cost;
                mu = (mu / 3.0).max(1e-15);
                accepted = true;
                break;
            }
            mu *= 4.0;
            if deadline_passed(opts) {
                break;
            }
        }
        if !accepted {
            status = if deadline_passed(opts) {
                SolveStatus::BudgetExhausted
            } else {
                SolveStatus::Stalled
            };
            break;
        }
        problem.evaluate(&x, &mut r, Some(&mut jac));
        grad = 2.0 * jac.tr_mul(&r);
    }

    let projected_gradient_norm = projected_gradient_norm(&x, &grad, lower, upper);
    if status == SolveStatus::MaxIterations && projected_gradient_norm <= opts.grad_tol {
        status = SolveStatus::Converged;
    }
    LsqReport {
        x,
        cost,
        initial_cost,
        iterations,
        status,
        projected_gradient_norm,
    }
}

fn deadline_passed(opts: &LsqOptions) -> bool {
    opts.deadline.is_some_and(|d| Instant::now() >= d)
}
