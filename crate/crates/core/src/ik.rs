//! Position-only inverse kinematics for a single finger.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::hand::{finger_tip_with_jacobian, Finger, HandModel};
use crate::optim::{minimize_bounded, LeastSquaresProblem, LsqOptions, SolveStatus};

#[derive(Clone, Debug)]
pub struct FingerIkSolution {
    pub q: Vec<f64>,
    /// Remaining fingertip distance to the target, m.
    pub error: f64,
    pub status: SolveStatus,
}

struct TipProblem<'a> {
    model: &'a HandModel,
    finger: Finger,
    target: Vector3<f64>,
}

impl LeastSquaresProblem for TipProblem<'_> {
    fn dim(&self) -> usize {
        self.model.finger_dof(self.finger)
    }

    fn residual_len(&self) -> usize {
        3
    }

    fn evaluate(&self, x: &DVector<f64>, r: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>) {
        let (tip, j) = finger_tip_with_jacobian(self.model, self.finger, x.as_slice());
        r.copy_from(&(tip - self.target));
        if let Some(out) = jac {
            out.copy_from(&j);
        }
    }
}

/// Moves the fingertip of `finger` as close as possible to `target` (palm
/// frame) within joint limits, starting from `q0`.
pub fn solve_finger_ik(
    model: &HandModel,
    finger: Finger,
    target: &Vector3<f64>,
    q0: &[f64],
    opts: &LsqOptions,
) -> FingerIkSolution {
    let range = model.finger_range(finger);
    let lower = &model.lower()[range.clone()];
    let upper = &model.upper()[range];
    let problem = TipProblem { model, finger, target: *target };
    let report = minimize_bounded(&problem, &DVector::from_column_slice(q0), lower, upper, opts);
    FingerIkSolution {
        q: report.x.as_slice().to_vec(),
        error: report.cost.sqrt(),
        status: report.status,
    }
}
