//! Hand keypoint-vector matching: the base retargeter.
//!
//! Finds the robot configuration whose keypoint vectors best match the
//! human's, scaled by `beta`, with a `gamma`-weighted pull toward the open hand:
//!
//! `min_q  sum_i |r_i(q) - beta * h_i(q_h)|^2 + gamma * |q|^2`  subject to joint limits.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{
    forward_kinematics, forward_kinematics_with_jacobian, pair_vector, HandModel, JointConfig,
    KeypointVectorSpec,
};
use crate::optim::{minimize_bounded, LeastSquaresProblem, LsqOptions, SolveStatus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HkvmParams {
    pub beta: f64,
    pub gamma: f64,
    /// Wall-clock budget per solve, seconds.
    pub time_budget: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for HkvmParams {
    fn default() -> Self {
        HkvmParams {
            beta: 1.6,
            gamma: 0.0025,
            time_budget: 0.1,
            max_iters: 200,
            grad_tol: 1e-6,
        }
    }
}

impl HkvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.time_budget > 0.0) {
            return Err(Error::invalid(format!(
                "time_budget must be positive, got {}",
                self.time_budget
            )));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        Ok(())
    }

    /// Same parameters with no wall-clock limit, so results depend only on
    /// the inputs and the iteration cap.
    pub fn without_deadline(&self) -> Self {
        HkvmParams {
            time_budget: f64::INFINITY,
            ..self.clone()
        }
    }

    fn deadline(&self, start: Instant) -> Option<Instant> {
        (self.time_budget.is_finite())
            .then(|| start.checked_add(Duration::from_secs_f64(self.time_budget)))
            .flatten()
    }
}

/// Previous solver output used to initialize the next solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarmStart(pub Option<JointConfig>);

impl WarmStart {
    pub fn cold() -> Self {
        WarmStart(None)
    }

    pub fn initial(&self, robot: &HandModel) -> JointConfig {
        match &self.0 {
            Some(q) => robot.clamp_to_limits(q),
            None => robot.clamp_to_limits(&robot.zero_config()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HkvmSolution {
    pub q: JointConfig,
    pub objective: f64,
    pub initial_objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
}

impl HkvmSolution {
    pub fn budget_exhausted(&self) -> bool {
        self.status == SolveStatus::BudgetExhausted
    }
}

/// The human's keypoint vectors scaled by `beta`: the fixed targets of one solve.
pub fn scaled_human_vectors(
    human: &HandModel,
    q_h: &JointConfig,
    beta: f64,
    spec: &KeypointVectorSpec,
) -> Result<Vec<Vector3<f64>>> {
    let pos = forward_kinematics(human, q_h)?;
    Ok(spec.pairs().iter().map(|&p| beta * pair_vector(&pos, p)).collect())
}

pub fn hkvm_objective(
    robot: &HandModel,
    human: &HandModel,
    q_o: &JointConfig,
    q_h: &JointConfig,
    params: &HkvmParams,
    spec: &KeypointVectorSpec,
) -> Result<f64> {
    let targets = scaled_human_vectors(human, q_h, params.beta, spec)?;
    let pos = forward_kinematics(robot, q_o)?;
    let data: f64 = spec
        .pairs()
        .iter()
        .zip(&targets)
        .map(|(&p, t)| (pair_vector(&pos, p) - t).norm_squared())
        .sum();
    Ok(data + params.gamma * q_o.0.iter().map(|v| v * v).sum::<f64>())
}

struct HkvmProblem<'a> {
    robot: &'a HandModel,
    spec: &'a KeypointVectorSpec,
    targets: Vec<Vector3<f64>>,
    sqrt_gamma: f64,
}

impl LeastSquaresProblem for HkvmProblem<'_> {
    fn dim(&self) -> usize {
        self.robot.dof()
    }

    fn residual_len(&self) -> usize {
        3 * self.spec.len() + self.robot.dof()
    }

    fn evaluate(&self, x: &DVector<f64>, r: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>) {
        let q = JointConfig(x.as_slice().to_vec());
        let n = self.robot.dof();
        let h = self.spec.len();
        match jac {
            Some(jac) => {
                let (pos, tips) = forward_kinematics_with_jacobian(self.robot, &q)
                    .expect("solver keeps dimensions consistent");
                jac.fill(0.0);
                for (i, (&pair, target)) in self.spec.pairs().iter().zip(&self.targets).enumerate() {
                    r.fixed_rows_mut::<3>(3 * i)
                        .copy_from(&(pair_vector(&pos, pair) - target));
                    for (kp, sign) in [(pair.1, 1.0), (pair.0, -1.0)] {
                        if let Some(f) = kp.finger() {
                            let range = self.robot.finger_range(f);
                            let mut block = jac.view_mut((3 * i, range.start), (3, range.len()));
                            block += tips.block(f) * sign;
                        }
                    }
                }
                for j in 0..n {
                    jac[(3 * h + j, j)] = self.sqrt_gamma;
                }
            }
            None => {
                let pos = forward_kinematics(self.robot, &q)
                    .expect("solver keeps dimensions consistent");
                for (i, (&pair, target)) in self.spec.pairs().iter().zip(&self.targets).enumerate() {
                    r.fixed_rows_mut::<3>(3 * i)
                        .copy_from(&(pair_vector(&pos, pair) - target));
                }
            }
        }
        for j in 0..n {
            r[3 * h + j] = self.sqrt_gamma * x[j];
        }
    }
}

/// Solves for the robot configuration `q_o*` from the human configuration.
///
/// Starts from the warm start (or the zero configuration) and never returns a
/// point worse than it. The result always lies within the robot's limits; if
/// the time budget runs out the best iterate is returned with
/// [`SolveStatus::BudgetExhausted`].
pub fn solve_hkvm(
    robot: &HandModel,
    human: &HandModel,
    q_h: &JointConfig,
    warm: &WarmStart,
    params: &HkvmParams,
    spec: &KeypointVectorSpec,
) -> Result<HkvmSolution> {
    let start = Instant::now();
    params.validate()?;
    if let Some(w) = &warm.0 {
        robot.check_config(w)?;
    }
    let targets = scaled_human_vectors(human, q_h, params.beta, spec)?;
    let problem = HkvmProblem {
        robot,
        spec,
        targets,
        sqrt_gamma: params.gamma.sqrt(),
    };
    let x0 = DVector::from_vec(warm.initial(robot).0);
    let opts = LsqOptions {
        max_iters: params.max_iters,
        grad_tol: params.grad_tol,
        deadline: params.deadline(start),
    };
    let report = minimize_bounded(&problem, &x0, &robot.lower(), &robot.upper(), &opts);
    Ok(HkvmSolution {
        q: JointConfig(report.x.as_slice().to_vec()),
        objective: report.cost,
        initial_objective: report.initial_cost,
        status: report.status,
        iterations: report.iterations,
        projected_gradient_norm: report.projected_gradient_norm,
    })
}
