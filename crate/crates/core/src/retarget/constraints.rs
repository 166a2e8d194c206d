//! Projection onto fixed thumb-to-fingertip distances.
//!
//! Finds the configuration closest to `q_d` (in joint space) whose thumb tip
//! sits exactly `d` from each constrained fingertip, within joint limits. The
//! equality constraints are handled with an augmented Lagrangian around the
//! box-constrained least-squares solver, warm-started at `q_d`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{finger_tip, finger_tip_with_jacobian, Finger, HandModel, JointConfig};
use crate::ik::solve_finger_ik;
use crate::optim::{minimize_bounded, LeastSquaresProblem, LsqOptions};

pub const DEFAULT_CONSTRAINT_DISTANCE: f64 = 0.01;
/// Largest accepted `| |r| - d |`, m.
pub const CONSTRAINT_TOLERANCE: f64 = 5e-4;

const MU_START: f64 = 1e4;
const MU_MAX: f64 = 1e12;
const MAX_OUTER: usize = 40;

#[derive(Clone, Debug)]
pub struct ConstraintOptions {
    pub distance: f64,
    pub tolerance: f64,
    pub deadline: Option<Instant>,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        ConstraintOptions {
            distance: DEFAULT_CONSTRAINT_DISTANCE,
            tolerance: CONSTRAINT_TOLERANCE,
            deadline: None,
        }
    }
}

/// Achieved thumb distance for one constrained finger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub finger: Finger,
    /// Thumb tip to fingertip distance, m.
    pub distance: f64,
    /// `|distance - d|`, m.
    pub violation: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug)]
pub struct ConstraintSolution {
    pub q: JointConfig,
    pub pairs: Vec<ConstraintReport>,
    /// Some constraint could not be met within tolerance; `q` is the best
    /// point found.
    pub infeasible: bool,
}

struct Projection<'a> {
    robot: &'a HandModel,
    q_d: &'a JointConfig,
    /// Global joint indices that may move: the thumb and each constrained finger.
    vars: Vec<usize>,
    fingers: Vec<Finger>,
    distance: f64,
    mu: f64,
    lambda: Vec<f64>,
}

impl Projection<'_> {
    fn full(&self, x: &DVector<f64>) -> JointConfig {
        let mut q = self.q_d.clone();
        for (k, &i) in self.vars.iter().enumerate() {
            q.0[i] = x[k];
        }
        q
    }

    /// Offset of finger `f`'s joints inside `vars`.
    fn offset(&self, f: Finger) -> usize {
        let start = self.robot.finger_range(f).start;
        self.vars.iter().position(|&i| i == start).expect("finger joints are variables")
    }

    fn violations(&self, q: &JointConfig) -> Vec<f64> {
        constraint_values(self.robot, q, &self.fingers, self.distance)
    }
}

impl LeastSquaresProblem for Projection<'_> {
    fn dim(&self) -> usize {
        self.vars.len()
    }

    fn residual_len(&self) -> usize {
        self.vars.len() + self.fingers.len()
    }

    fn evaluate(&self, x: &DVector<f64>, r: &mut DVector<f64>, jac: Option<&mut DMatrix<f64>>) {
        let n = self.vars.len();
        for (k, &i) in self.vars.iter().enumerate() {
            r[k] = x[k] - self.q_d.0[i];
        }
        let q = self.full(x);
        let thumb = q.finger(self.robot, Finger::Thumb);
        let (t_tip, t_jac) = finger_tip_with_jacobian(self.robot, Finger::Thumb, thumb);
        let scale = self.mu.sqrt();
        let mut jac = jac;
        if let Some(j) = jac.as_deref_mut() {
            j.fill(0.0);
            j.view_mut((0, 0), (n, n)).fill_diagonal(1.0);
        }
        for (c, &f) in self.fingers.iter().enumerate() {
            let (tip, f_jac) = finger_tip_with_jacobian(self.robot, f, q.finger(self.robot, f));
            let diff = tip - t_tip;
            let dist = diff.norm();
            r[n + c] = scale * (dist - self.distance + self.lambda[c] / self.mu);
            if let Some(j) = jac.as_deref_mut() {
                // d|diff|/dq is undefined when the tips coincide; any direction works.
                let u = if dist > 1e-12 { diff / dist } else { Vector3::x() };
                let t_off = self.offset(Finger::Thumb);
                let f_off = self.offset(f);
                for k in 0..t_jac.ncols() {
                    j[(n + c, t_off + k)] -= scale * u.dot(&t_jac.column(k));
                }
                for k in 0..f_jac.ncols() {
                    j[(n + c, f_off + k)] += scale * u.dot(&f_jac.column(k));
                }
            }
        }
    }
}

/// Signed `|tip_f - tip_thumb| - d` for each finger.
pub fn constraint_values(robot: &HandModel, q: &JointConfig, fingers: &[Finger], distance: f64) -> Vec<f64> {
    let thumb = finger_tip(robot, Finger::Thumb, q.finger(robot, Finger::Thumb));
    fingers
        .iter()
        .map(|&f| (finger_tip(robot, f, q.finger(robot, f)) - thumb).norm() - distance)
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn validate_fingers(fingers: &[Finger]) -> Result<()> {
    for (i, f) in fingers.iter().enumerate() {
        if *f == Finger::Thumb {
            return Err(Error::invalid("constraints pair the thumb with another finger; got thumb"));
        }
        if fingers[..i].contains(f) {
            return Err(Error::invalid(format!("constraint on the {f} finger given twice")));
        }
    }
    Ok(())
}

/// Augmented Lagrangian from `x0`. Returns the final point and its violations.
fn run_from(p: &mut Projection<'_>, x0: DVector<f64>, lower: &[f64], upper: &[f64], opts: &ConstraintOptions) -> (DVector<f64>, Vec<f64>) {
    let inner = LsqOptions { max_iters: 100, grad_tol: 1e-12, deadline: opts.deadline };
    let mut x = x0;
    let mut c = p.violations(&p.full(&x));
    // Stop a little inside the tolerance so the reported violation is not borderline.
    let target = 0.1 * opts.tolerance;
    for _ in 0..MAX_OUTER {
        let report = minimize_bounded(&*p, &x, lower, upper, &inner);
        x = report.x;
        let prev = max_abs(&c);
        c = p.violations(&p.full(&x));
        let now = max_abs(&c);
        if now <= target || opts.deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        for (l, ci) in p.lambda.iter_mut().zip(&c) {
            *l += p.mu * ci;
        }
        if now > 0.25 * prev {
            p.mu = (p.mu * 10.0).min(MU_MAX);
        }
    }
    (x, c)
}

/// A start with the thumb tip already placed near the first constrained
/// fingertip, used when the local solve from `q_d` gets stuck.
fn pinch_start(robot: &HandModel, q_d: &JointConfig, fingers: &[Finger], distance: f64) -> JointConfig {
    let mut q = q_d.clone();
    let f = fingers[0];
    let thumb_q = q_d.finger(robot, Finger::Thumb).to_vec();
    let thumb = finger_tip(robot, Finger::Thumb, &thumb_q);
    let tip = finger_tip(robot, f, q_d.finger(robot, f));
    let dir = (thumb - tip).try_normalize(1e-12).unwrap_or_else(Vector3::z);
    let target = tip + distance * dir;
    let sol = solve_finger_ik(robot, Finger::Thumb, &target, &thumb_q, &LsqOptions::default());
    q.finger_mut(robot, Finger::Thumb).copy_from_slice(&sol.q);
    q
}

/// Projects `q_d` onto the constraint set for `fingers` (each paired with
/// the thumb). With no fingers the input is returned unchanged.
pub fn solve_constraints(
    robot: &HandModel,
    q_d: &JointConfig,
    fingers: &[Finger],
    opts: &ConstraintOptions,
) -> Result<ConstraintSolution> {
    robot.check_config(q_d)?;
    validate_fingers(fingers)?;
    if !(opts.distance > 0.0 && opts.distance.is_finite()) {
        return Err(Error::invalid(format!("constraint distance must be positive, got {}", opts.distance)));
    }
    if !(opts.tolerance > 0.0) {
        return Err(Error::invalid("constraint tolerance must be positive"));
    }
    if fingers.is_empty() {
        return Ok(ConstraintSolution { q: q_d.clone(), pairs: Vec::new(), infeasible: false });
    }

    let q_d = robot.clamp_to_limits(q_d);
    let mut involved = vec![Finger::Thumb];
    involved.extend(fingers.iter().copied());
    involved.sort();
    let vars: Vec<usize> = involved.iter().flat_map(|&f| robot.finger_range(f)).collect();
    let lower: Vec<f64> = vars.iter().map(|&i| robot.lower()[i]).collect();
    let upper: Vec<f64> = vars.iter().map(|&i| robot.upper()[i]).collect();
    let mut p = Projection {
        robot,
        q_d: &q_d,
        vars,
        fingers: fingers.to_vec(),
        distance: opts.distance,
        mu: MU_START,
        lambda: vec![0.0; fingers.len()],
    };

    let x0 = DVector::from_iterator(p.vars.len(), p.vars.iter().map(|&i| q_d.0[i]));
    let (mut x, mut c) = run_from(&mut p, x0, &lower, &upper, opts);
    if max_abs(&c) > opts.tolerance {
        let start = pinch_start(robot, &q_d, fingers, opts.distance);
        let x1 = DVector::from_iterator(p.vars.len(), p.vars.iter().map(|&i| start.0[i]));
        p.mu = MU_START;
        p.lambda.iter_mut().for_each(|l| *l = 0.0);
        let (x2, c2) = run_from(&mut p, x1, &lower, &upper, opts);
        if max_abs(&c2) < max_abs(&c) {
            x = x2;
            c = c2;
        }
    }

    let q = p.full(&x);
    let pairs: Vec<ConstraintReport> = fingers
        .iter()
        .zip(&c)
        .map(|(&finger, &ci)| ConstraintReport {
            finger,
            distance: ci + opts.distance,
            violation: ci.abs(),
            satisfied: ci.abs() <= opts.tolerance,
        })
        .collect();
    let infeasible = pairs.iter().any(|r| !r.satisfied);
    Ok(ConstraintSolution { q, pairs, infeasible })
}
