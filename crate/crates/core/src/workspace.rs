//! Reachable-workspace metrics from voxel counts.
//!
//! Joint workspace: per finger, the number of distinct cells of side `delta`
//! (rad) visited in that finger's joint space, times the cell volume
//! `delta^|f|`, summed over fingers. Fingertip workspace: the same count over
//! fingertip positions with cubic cells of side `delta` (m), reported in cm^3.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{forward_kinematics, Finger, HandModel, JointConfig};
use crate::retarget::{trajectory_ranges, RetargetModels, RetargeterKind, RetargetSession, SessionConfig};
use crate::trajectory::Trajectory;

pub const DEFAULT_DELTA_JOINT: f64 = 0.05;
pub const DEFAULT_DELTA_TIP: f64 = 0.005;

/// Volume per finger plus the total, with the cell counts behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelVolume {
    pub total: f64,
    /// Thumb, index, middle, ring.
    pub per_finger: [f64; 4],
    pub cells: [usize; 4],
}

fn check_delta(delta: f64, what: &str) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} resolution must be positive, got {delta}")))
    }
}

/// `delta^dim` by repeated multiplication, which unlike `powi` rounds the
/// same way everywhere.
fn cell_volume(delta: f64, dim: usize) -> f64 {
    (0..dim).fold(1.0, |v, _| v * delta)
}

fn cell(v: f64, delta: f64) -> i64 {
    (v / delta).floor() as i64
}

/// Joint workspace in rad^|f| summed over fingers.
pub fn joint_workspace(configs: &[JointConfig], model: &HandModel, delta: f64) -> Result<VoxelVolume> {
    check_delta(delta, "joint")?;
    let mut sets: [HashSet<Vec<i64>>; 4] = Default::default();
    for q in configs {
        model.check_config(q)?;
        for f in Finger::ALL {
            sets[f.index()].insert(q.finger(model, f).iter().map(|&v| cell(v, delta)).collect());
        }
    }
    let cells = sets.map(|s| s.len());
    let dof = Finger::ALL.map(|f| model.finger_dof(f));
    let per_finger = Finger::ALL.map(|f| cells[f.index()] as f64 * cell_volume(delta, dof[f.index()]));
    // Counts are summed per cell dimension first, so equal-dimension fingers
    // contribute a single rounding.
    let mut by_dim = std::collections::BTreeMap::<usize, usize>::new();
    for (d, c) in dof.iter().zip(&cells) {
        *by_dim.entry(*d).or_default() += c;
    }
    let total = by_dim.iter().map(|(&d, &c)| c as f64 * cell_volume(delta, d)).sum();
    Ok(VoxelVolume { total, per_finger, cells })
}

/// Fingertip workspace in cm^3 summed over fingers.
pub fn fingertip_workspace(configs: &[JointConfig], model: &HandModel, delta: f64) -> Result<VoxelVolume> {
    check_delta(delta, "fingertip")?;
    let mut sets: [HashSet<[i64; 3]>; 4] = Default::default();
    for q in configs {
        let pos = forward_kinematics(model, q)?;
        for f in Finger::ALL {
            let p = pos.tip(f);
            sets[f.index()].insert([cell(p.x, delta), cell(p.y, delta), cell(p.z, delta)]);
        }
    }
    let cells = sets.map(|s| s.len());
    // Side in cm; dividing by 0.01 keeps 5 mm at exactly 0.5 cm.
    let cm3 = cell_volume(delta / 0.01, 3);
    let per_finger = cells.map(|c| c as f64 * cm3);
    let total = cells.iter().sum::<usize>() as f64 * cm3;
    Ok(VoxelVolume { total, per_finger, cells })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceRow {
    pub retargeter: RetargeterKind,
    /// rad^4
    pub joint: VoxelVolume,
    /// cm^3
    pub fingertip: VoxelVolume,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceReport {
    pub delta_joint: f64,
    pub delta_tip: f64,
    pub num_configs: usize,
    pub rows: Vec<WorkspaceRow>,
}

impl WorkspaceReport {
    pub fn row(&self, kind: RetargeterKind) -> Option<&WorkspaceRow> {
        self.rows.iter().find(|r| r.retargeter == kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One line per retargeter: joint workspace (rad^4) and fingertip
    /// workspace (cm^3), totals then per finger.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Reachable workspace over {} configurations (joint cell {} rad, fingertip cell {} m)",
            self.num_configs, self.delta_joint, self.delta_tip
        );
        let _ = writeln!(
            out,
            "{:<8} {:>12} {:>12} | {:>9} {:>9} {:>9} {:>9}",
            "", "joint rad^4", "tip cm^3", "thumb", "index", "middle", "ring"
        );
        for r in &self.rows {
            let f = &r.fingertip.per_finger;
            let _ = writeln!(
                out,
                "{:<8} {:>12.6} {:>12.3} | {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                r.retargeter.label(),
                r.joint.total,
                r.fingertip.total,
                f[0],
                f[1],
                f[2],
                f[3]
            );
        }
        out
    }
}

/// Robot configurations produced by one retargeter over `human_traj`,
/// ticking a single session in order.
pub fn retarget_trajectory(
    models: &Arc<RetargetModels>,
    config: SessionConfig,
    human_traj: &Trajectory,
) -> Result<Vec<JointConfig>> {
    human_traj.check_model(&models.human)?;
    let mut session = RetargetSession::new(models.clone(), config)?;
    human_traj
        .configs
        .iter()
        .map(|q| session.step(q).map(|r| r.q_c))
        .collect()
}

/// Session settings used for workspace evaluation: no wall-clock budget so the
/// report depends only on the inputs, and the joint baseline rescales the
/// range actually covered by the trajectory.
pub fn evaluation_config(kind: RetargeterKind, models: &RetargetModels, human_traj: &Trajectory) -> SessionConfig {
    let mut c = SessionConfig::for_kind(kind, models.bundle.as_ref());
    c.hkvm = c.hkvm.without_deadline();
    if kind == RetargeterKind::Joint {
        c.joint_ranges = Some(trajectory_ranges(human_traj));
    }
    c
}

/// Runs every retargeter in `kinds` over the human trajectory and measures
/// both workspaces. Retargeters run concurrently; each pass is sequential.
pub fn compare_retargeters(
    models: &Arc<RetargetModels>,
    human_traj: &Trajectory,
    kinds: &[RetargeterKind],
    delta_joint: f64,
    delta_tip: f64,
) -> Result<WorkspaceReport> {
    check_delta(delta_joint, "joint")?;
    check_delta(delta_tip, "fingertip")?;
    human_traj.validate()?;
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|&kind| {
                let config = evaluation_config(kind, models, human_traj);
                scope.spawn(move || -> Result<WorkspaceRow> {
                    let out = retarget_trajectory(models, config, human_traj)?;
                    Ok(WorkspaceRow {
                        retargeter: kind,
                        joint: joint_workspace(&out, &models.robot, delta_joint)?,
                        fingertip: fingertip_workspace(&out, &models.robot, delta_tip)?,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("workspace thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(WorkspaceReport {
        delta_joint,
        delta_tip,
        num_configs: human_traj.len(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn random_walk(model: &HandModel, n: usize, seed: u64) -> Vec<JointConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut q = model.mid_config();
        (0..n)
            .map(|_| {
                for v in &mut q.0 {
                    *v += rng.random_range(-0.08..0.08);
                }
                q = model.clamp_to_limits(&q);
                q.clone()
            })
            .collect()
    }

    /// Re-counts by sorting stringified keys: no hashing, no shared code.
    fn naive_joint(configs: &[JointConfig], model: &HandModel, delta: f64) -> [usize; 4] {
        let mut counts = [0; 4];
        for f in Finger::ALL {
            let mut keys = BTreeSet::new();
            for q in configs {
                let key: Vec<String> = q.finger(model, f).iter().map(|v| format!("{}", (v / delta).floor())).collect();
                keys.insert(key.join(","));
            }
            counts[f.index()] = keys.len();
        }
        counts
    }

    fn naive_tip(configs: &[JointConfig], model: &HandModel, delta: f64) -> [usize; 4] {
        let mut counts = [0; 4];
        for f in Finger::ALL {
            let mut keys: Vec<(i64, i64, i64)> = configs
                .iter()
                .map(|q| {
                    let p = crate::hand::finger_tip(model, f, q.finger(model, f));
                    ((p.x / delta).floor() as i64, (p.y / delta).floor() as i64, (p.z / delta).floor() as i64)
                })
                .collect();
            keys.sort();
            keys.dedup();
            counts[f.index()] = keys.len();
        }
        counts
    }

    #[test]
    fn constant_trajectory_closed_forms() {
        let robot = HandModel::bundled_robot();
        let configs = vec![robot.mid_config(); 7];
        let j = joint_workspace(&configs, &robot, 0.05).unwrap();
        assert_eq!(j.cells, [1; 4]);
        assert_eq!(j.total, 4.0 * (0.05 * 0.05 * 0.05 * 0.05));
        let t = fingertip_workspace(&configs, &robot, 0.005).unwrap();
        assert_eq!(t.cells, [1; 4]);
        assert_eq!(t.total, 0.5);
    }

    #[test]
    fn single_finger_cell_counts() {
        let robot = HandModel::bundled_robot();
        let base = robot.mid_config();
        let mut configs = vec![base.clone()];
        for k in 1..3 {
            let mut q = base.clone();
            q.finger_mut(&robot, Finger::Index)[1] = (base.finger(&robot, Finger::Index)[1] / 0.05).floor() * 0.05
                + 0.05 * k as f64
                + 0.01;
            configs.push(q);
        }
        let j = joint_workspace(&configs, &robot, 0.05).unwrap();
        assert_eq!(j.cells, [1, 3, 1, 1]);
        assert!((j.per_finger[1] - 1.875e-5).abs() < 1e-18);
        let t = fingertip_workspace(&configs[..1], &robot, 0.005).unwrap();
        assert_eq!(t.per_finger[1], 0.125);
    }

    #[test]
    fn floors_toward_negative_infinity() {
        assert_eq!(cell(-0.01, 0.05), -1);
        assert_eq!(cell(0.01, 0.05), 0);
        assert_eq!(cell(-0.05, 0.05), -1);
    }

    #[test]
    fn matches_brute_force_on_random_trajectories() {
        let robot = HandModel::bundled_robot();
        for seed in 0..50 {
            let configs = random_walk(&robot, 200, seed);
            let j = joint_workspace(&configs, &robot, 0.05).unwrap();
            let counts = naive_joint(&configs, &robot, 0.05);
            assert_eq!(j.cells, counts, "seed {seed}");
            assert_eq!(j.total, counts.iter().sum::<usize>() as f64 * (0.05 * 0.05 * 0.05 * 0.05));
            let t = fingertip_workspace(&configs, &robot, 0.005).unwrap();
            let counts = naive_tip(&configs, &robot, 0.005);
            assert_eq!(t.cells, counts, "seed {seed}");
            assert_eq!(t.total, counts.iter().sum::<usize>() as f64 * 0.125);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn appending_never_shrinks_and_order_does_not_matter(seed in 0u64..1000, extra in 1usize..40) {
            let robot = HandModel::bundled_robot();
            let configs = random_walk(&robot, 60 + extra, seed);
            let head = &configs[..60];
            let j0 = joint_workspace(head, &robot, 0.05).unwrap();
            let j1 = joint_workspace(&configs, &robot, 0.05).unwrap();
            let t0 = fingertip_workspace(head, &robot, 0.005).unwrap();
            let t1 = fingertip_workspace(&configs, &robot, 0.005).unwrap();
            for f in 0..4 {
                prop_assert!(j1.per_finger[f] >= j0.per_finger[f]);
                prop_assert!(t1.per_finger[f] >= t0.per_finger[f]);
            }
            let mut rev = configs.clone();
            rev.reverse();
            prop_assert_eq!(joint_workspace(&rev, &robot, 0.05).unwrap(), j1);
            prop_assert_eq!(fingertip_workspace(&rev, &robot, 0.005).unwrap(), t1);
        }
    }

    #[test]
    fn halving_the_cell_never_lowers_the_count() {
        let robot = HandModel::bundled_robot();
        let configs = random_walk(&robot, 300, 9);
        let coarse = fingertip_workspace(&configs, &robot, 0.01).unwrap();
        let fine = fingertip_workspace(&configs, &robot, 0.005).unwrap();
        for f in 0..4 {
            assert!(fine.cells[f] >= coarse.cells[f]);
        }
        let coarse = joint_workspace(&configs, &robot, 0.1).unwrap();
        let fine = joint_workspace(&configs, &robot, 0.05).unwrap();
        for f in 0..4 {
            assert!(fine.cells[f] >= coarse.cells[f]);
        }
    }

    #[test]
    fn rejects_bad_resolution() {
        let robot = HandModel::bundled_robot();
        let configs = vec![robot.mid_config()];
        assert!(joint_workspace(&configs, &robot, 0.0).is_err());
        assert!(fingertip_workspace(&configs, &robot, -1.0).is_err());
    }

    fn human_walk(seed: u64) -> (Arc<RetargetModels>, Trajectory) {
        let (models, _) =
            RetargetModels::new(HandModel::bundled_human(), HandModel::bundled_robot(), None).unwrap();
        let configs = random_walk(&models.human, 40, seed);
        let traj = Trajectory::new(configs, Some(&models.human)).unwrap();
        (models, traj)
    }

    #[test]
    fn comparison_is_deterministic_and_rows_repeat() {
        let (models, traj) = human_walk(1);
        let kinds = [RetargeterKind::Hkvm, RetargeterKind::Joint, RetargeterKind::Hkvm];
        let a = compare_retargeters(&models, &traj, &kinds, 0.05, 0.005).unwrap();
        let b = compare_retargeters(&models, &traj, &kinds, 0.05, 0.005).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.rows[0].joint, a.rows[2].joint);
        assert_eq!(a.rows[0].fingertip, a.rows[2].fingertip);
        assert!(a.to_table().contains("HKVM"));
    }

    #[test]
    fn stateless_baselines_ignore_order() {
        let (models, traj) = human_walk(2);
        let mut rev = traj.clone();
        rev.configs.reverse();
        for kind in [RetargeterKind::Joint, RetargeterKind::Ik] {
            let run = |t: &Trajectory| {
                let mut c = evaluation_config(kind, &models, t);
                c.warm_start = false;
                let out = retarget_trajectory(&models, c, t).unwrap();
                (joint_workspace(&out, &models.robot, 0.05).unwrap(), fingertip_workspace(&out, &models.robot, 0.005).unwrap())
            };
            assert_eq!(run(&traj), run(&rev), "{kind}");
        }
    }
}
