//! Baseline retargeters: per-joint rescaling, fingertip IK and direct GP regression.

use crate::error::{Error, Result};
use crate::gp::{angle_map, TrainedFingerGp};
use crate::hand::{forward_kinematics, Finger, HandModel, JointConfig};
use crate::ik::solve_finger_ik;
use crate::optim::LsqOptions;
use crate::trajectory::Trajectory;

/// Observed `[min, max]` of every joint over a trajectory.
pub fn trajectory_ranges(traj: &Trajectory) -> Vec<[f64; 2]> {
    let mut ranges = vec![[f64::INFINITY, f64::NEG_INFINITY]; traj.dim()];
    for q in &traj.configs {
        for (r, &v) in ranges.iter_mut().zip(&q.0) {
            r[0] = r[0].min(v);
            r[1] = r[1].max(v);
        }
    }
    ranges
}

/// Maps each human joint affinely from its range onto the robot joint's
/// limits, clamped. Joints whose human range has no width map to the robot
/// midpoint; their indices are returned alongside the result.
pub fn retarget_joint(
    q_h: &JointConfig,
    human_range: &[[f64; 2]],
    robot_limits: &[[f64; 2]],
) -> Result<(JointConfig, Vec<usize>)> {
    if q_h.len() != human_range.len() || q_h.len() != robot_limits.len() {
        return Err(Error::invalid(format!(
            "joint rescaling needs equal joint counts: human config {}, human ranges {}, robot limits {}",
            q_h.len(),
            human_range.len(),
            robot_limits.len()
        )));
    }
    let mut degenerate = Vec::new();
    let q = q_h
        .0
        .iter()
        .zip(human_range.iter().zip(robot_limits))
        .enumerate()
        .map(|(i, (&v, ([h_lo, h_hi], [r_lo, r_hi])))| {
            let width = h_hi - h_lo;
            if !(width > 0.0) {
                degenerate.push(i);
                return 0.5 * (r_lo + r_hi);
            }
            (r_lo + (v - h_lo) / width * (r_hi - r_lo)).clamp(*r_lo, *r_hi)
        })
        .collect();
    Ok((JointConfig(q), degenerate))
}

/// Per-finger IK result of [`retarget_ik`].
#[derive(Clone, Debug)]
pub struct IkOutput {
    pub q: JointConfig,
    /// Remaining fingertip distance to the human fingertip, m, per finger.
    pub tip_errors: [f64; 4],
}

/// Places each robot fingertip at the human fingertip's palm-frame position,
/// unscaled, starting from `start` (or the clamped zero configuration).
pub fn retarget_ik(
    human: &HandModel,
    robot: &HandModel,
    q_h: &JointConfig,
    start: Option<&JointConfig>,
    opts: &LsqOptions,
) -> Result<IkOutput> {
    let pos = forward_kinematics(human, q_h)?;
    let start = match start {
        Some(s) => {
            robot.check_config(s)?;
            robot.clamp_to_limits(s)
        }
        None => robot.clamp_to_limits(&robot.zero_config()),
    };
    let mut q = start.clone();
    let mut tip_errors = [0.0; 4];
    for f in Finger::ALL {
        let sol = solve_finger_ik(robot, f, &pos.tip(f), start.finger(robot, f), opts);
        q.finger_mut(robot, f).copy_from_slice(&sol.q);
        tip_errors[f.index()] = sol.error;
    }
    Ok(IkOutput { q, tip_errors })
}

/// Robot angles predicted directly from the human angles by per-finger GPs.
/// Fingers whose prediction has a degenerate row keep their `fallback`
/// angles and are returned in the second element.
pub fn retarget_gp_direct(
    human: &HandModel,
    robot: &HandModel,
    q_h: &JointConfig,
    gps: &[TrainedFingerGp],
    fallback: &JointConfig,
) -> Result<(JointConfig, Vec<Finger>)> {
    human.check_config(q_h)?;
    robot.check_config(fallback)?;
    let mut q = fallback.clone();
    let mut fell_back = Vec::new();
    for f in Finger::ALL {
        let gp = gps
            .iter()
            .find(|g| g.finger() == f)
            .ok_or_else(|| Error::invalid(format!("no direct model for the {f} finger")))?;
        let mean = gp.posterior_mean(q_h.finger(human, f))?;
        if mean.nrows() != robot.finger_dof(f) {
            return Err(Error::invalid(format!(
                "direct model for the {f} finger predicts {} angles, robot has {}",
                mean.nrows(),
                robot.finger_dof(f)
            )));
        }
        match angle_map(&mean) {
            Ok(angles) => q.finger_mut(robot, f).copy_from_slice(&angles),
            Err(Error::DegenerateRow { .. }) => fell_back.push(f),
            Err(e) => return Err(e),
        }
    }
    Ok((super::wrap_into_limits(robot, &q), fell_back))
}
