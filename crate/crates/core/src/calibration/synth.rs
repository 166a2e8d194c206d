//! Synthetic calibration poses and sweep trajectories.
//!
//! The pose set has the structure of a hand-labeled calibration session:
//! boundary poses of every finger (full extension, full flexion, near-palm
//! and far pinches), poses halfway between them, and a set of active fingers
//! per pose. Robot labels come from a known ground-truth warp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{CalibrationDataset, CalibrationSample};
use crate::error::{Error, Result};
use crate::hand::{finger_tip, Finger, HandModel, JointConfig, KeypointVectorSpec};
use crate::hkvm::{solve_hkvm, HkvmParams, WarmStart};
use crate::ik::solve_finger_ik;
use crate::optim::LsqOptions;
use crate::trajectory::Trajectory;

/// Maximum per-joint perturbation applied to every pose, rad.
pub const POSE_JITTER: f64 = 0.02;

/// How robot labels are produced from human poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GroundTruthWarp {
    /// Robot angles equal the human angles; fails if they leave the robot limits.
    Identity,
    /// Robot label is the cold HKVM output, so every residual is zero.
    Hkvm,
    /// HKVM output pushed further along the operator's own joint angles: the
    /// labeled robot poses reach further into flexion, toward the palm, and
    /// further out in extension than HKVM does. Each joint moves by
    /// `room * tanh((gain - 1) * q_h / room)`, where `room` is the distance
    /// from the HKVM angle to the limit in the push direction, so small pushes
    /// are `(gain - 1) * q_h` and large ones saturate smoothly inside the limits.
    Expansion { gain: f64 },
}

impl GroundTruthWarp {
    pub fn expansion() -> Self {
        GroundTruthWarp::Expansion { gain: 1.5 }
    }
}

const LONG_FINGERS: [Finger; 3] = [Finger::Index, Finger::Middle, Finger::Ring];

const OPEN: [f64; 4] = [0.0; 4];
const RELAXED: [f64; 4] = [0.0, 0.35, 0.45, 0.3];
const FIST: [f64; 4] = [0.0, 1.5, 1.6, 1.15];
const THUMB_RELAXED: [f64; 4] = [0.25, 0.2, 0.2, 0.2];
const THUMB_FIST: [f64; 4] = [0.8, 0.75, 0.7, 0.7];
const THUMB_PALM_BASE: [f64; 4] = [1.2, 0.95, 0.2, 0.1];
const THUMB_OUT: [f64; 4] = [-0.35, -0.25, -0.15, -0.25];
const TABLETOP: [f64; 4] = [0.0, 1.45, 0.05, 0.0];
const HOOK: [f64; 4] = [0.0, 0.05, 1.6, 1.25];

/// Finger shapes for pinches with the tip close to the palm and far from it,
/// per long finger, chosen inside the region the thumb can reach.
fn pinch_shapes(f: Finger) -> ([f64; 4], [f64; 4]) {
    match f {
        Finger::Index => ([0.0, 1.0, 1.65, 1.15], [0.0, 1.05, 0.75, 0.5]),
        Finger::Middle => ([0.0, 1.2, 1.65, 1.15], [0.0, 1.1, 1.05, 0.75]),
        _ => ([0.0, 1.25, 1.65, 1.15], [0.0, 0.85, 1.45, 1.0]),
    }
}

/// Thumb IK starts for pinches; the reachable set is not convex in joint space.
const PINCH_THUMB_STARTS: [[f64; 4]; 4] =
    [THUMB_FIST, [1.2, 0.9, 0.0, 0.0], [0.4, 0.4, 0.9, 0.9], [1.0, 1.0, 0.5, 0.3]];

fn mid(a:[f64; 4], b: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| 0.5 * (a[i] + b[i]))
}

/// A named human pose and the fingers it calibrates.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseTemplate {
    pub name: String,
    pub human_config: JointConfig,
    pub active_fingers: Vec<Finger>,
}

struct PoseBuilder<'a> {
    human: &'a HandModel,
    rng: ChaCha8Rng,
}

impl PoseBuilder<'_> {
    fn jittered(&mut self, fingers: [[f64; 4]; 4]) -> JointConfig {
        let mut q = JointConfig(fingers.iter().flatten().copied().collect());
        for v in &mut q.0 {
            *v += self.rng.random_range(-POSE_JITTER..=POSE_JITTER);
        }
        self.human.clamp_to_limits(&q)
    }

    fn pose(&mut self, name: String, fingers: [[f64; 4]; 4], active: &[Finger]) -> PoseTemplate {
        PoseTemplate {
            name,
            human_config: self.jittered(fingers),
            active_fingers: active.to_vec(),
        }
    }

    /// Thumb placed by IK so its tip meets the fingertip of `f`.
    fn pinch(&mut self, name: String, f: Finger, shape: [f64; 4]) -> PoseTemplate {
        let mut fingers = [THUMB_RELAXED, RELAXED, RELAXED, RELAXED];
        fingers[f.index()] = shape;
        let mut q = self.jittered(fingers);
        let target = finger_tip(self.human, f, q.finger(self.human, f));
        let opts = LsqOptions { max_iters: 500, grad_tol: 1e-12, deadline: None };
        let sol = PINCH_THUMB_STARTS
            .iter()
            .map(|start| solve_finger_ik(self.human, Finger::Thumb, &target, start, &opts))
            .min_by(|a, b| a.error.total_cmp(&b.error))
            .expect("at least one start");
        q.finger_mut(self.human, Finger::Thumb).copy_from_slice(&sol.q);
        PoseTemplate {
            name,
            human_config: q,
            active_fingers: vec![Finger::Thumb, f],
        }
    }
}

/// The 24 calibration poses for the given human model. `seed` only affects
/// the small per-joint jitter.
pub fn calibration_poses(human: &HandModel, seed: u64) -> Result<Vec<PoseTemplate>> {
    if Finger::ALL.iter().any(|&f| human.finger_dof(f) != 4) {
        return Err(Error::invalid("synthetic poses are defined for four joints per finger"));
    }
    let mut b = PoseBuilder { human, rng: ChaCha8Rng::seed_from_u64(seed) };
    let all = Finger::ALL;
    let mut poses = vec![
        b.pose("open".into(), [OPEN; 4], &all),
        b.pose("fist".into(), [THUMB_FIST, FIST, FIST, FIST], &all),
        b.pose(
            "half_fist".into(),
            [mid(OPEN, THUMB_FIST), mid(OPEN, FIST), mid(OPEN, FIST), mid(OPEN, FIST)],
            &all,
        ),
        b.pose("relaxed".into(), [THUMB_RELAXED, RELAXED, RELAXED, RELAXED], &all),
    ];
    for f in LONG_FINGERS {
        let (near, far) = pinch_shapes(f);
        for (tag, shape) in [("far", far), ("mid", mid(far, near)), ("near", near)] {
            poses.push(b.pinch(format!("pinch_{tag}_{f}"), f, shape));
        }
    }
    for f in LONG_FINGERS {
        let mut fingers = [THUMB_RELAXED, RELAXED, RELAXED, RELAXED];
        fingers[f.index()] = TABLETOP;
        poses.push(b.pose(format!("tabletop_{f}"), fingers, &[f]));
    }
    for f in LONG_FINGERS {
        let mut fingers = [THUMB_RELAXED, RELAXED, RELAXED, RELAXED];
        fingers[f.index()] = HOOK;
        poses.push(b.pose(format!("hook_{f}"), fingers, &[f]));
    }
    for (name, thumb) in [
        ("thumb_palm_base", THUMB_PALM_BASE),
        ("thumb_mid", mid(THUMB_PALM_BASE, THUMB_OUT)),
        ("thumb_out", THUMB_OUT),
    ] {
        poses.push(b.pose(name.into(), [thumb, OPEN, OPEN, OPEN], &[Finger::Thumb]));
    }
    let spread = [THUMB_OUT, [0.3, 0.1, 0.1, 0.05], [0.0, 0.1, 0.1, 0.05], [-0.3, 0.1, 0.1, 0.05]];
    let adduct = [THUMB_RELAXED, [-0.2, 0.2, 0.2, 0.1], [0.0, 0.2, 0.2, 0.1], [0.2, 0.2, 0.2, 0.1]];
    poses.push(b.pose("spread".into(), spread, &LONG_FINGERS));
    poses.push(b.pose("adduct".into(), adduct, &LONG_FINGERS));
    Ok(poses)
}

/// Applies `warp` to one human pose.
pub fn apply_warp(
    warp: &GroundTruthWarp,
    human: &HandModel,
    robot: &HandModel,
    q_h: &JointConfig,
    params: &HkvmParams,
    spec: &KeypointVectorSpec,
) -> Result<JointConfig> {
    let hkvm = |q: &JointConfig| {
        solve_hkvm(robot, human, q, &WarmStart::cold(), &params.without_deadline(), spec).map(|s| s.q)
    };
    match warp {
        GroundTruthWarp::Identity => {
            if q_h.len() != robot.dof() {
                return Err(Error::invalid("identity warp needs hands with equal joint counts"));
            }
            Ok(q_h.clone())
        }
        GroundTruthWarp::Hkvm => hkvm(q_h),
        GroundTruthWarp::Expansion { gain } => {
            if !(gain.is_finite() && *gain > 0.0) {
                return Err(Error::invalid(format!("expansion gain must be positive, got {gain}")));
            }
            if q_h.len() != robot.dof() {
                return Err(Error::invalid("expansion warp needs hands with equal joint counts"));
            }
            let base = hkvm(q_h)?;
            let pushed = base
                .0
                .iter()
                .zip(&q_h.0)
                .zip(robot.limits())
                .map(|((&o, &h), [lo, hi])| {
                    let push = (gain - 1.0) * h;
                    let room = if push >= 0.0 { hi - o } else { o - lo }.max(0.0);
                    if room == 0.0 {
                        o
                    } else {
                        o + room * (push / room).tanh()
                    }
                })
                .collect();
            Ok(JointConfig(pushed))
        }
    }
}

/// Generates the 24-sample calibration set with robot labels from `warp`.
///
/// Fails if any label falls outside the robot's joint limits.
pub fn generate_synthetic_calibration(
    seed: u64,
    warp: &GroundTruthWarp,
    human: &HandModel,
    robot: &HandModel,
    params: &HkvmParams,
    spec: &KeypointVectorSpec,
) -> Result<CalibrationDataset> {
    let samples = calibration_poses(human, seed)?
        .into_iter()
        .map(|p| {
            let robot_config = apply_warp(warp, human, robot, &p.human_config, params, spec)?;
            if !robot.within_limits(&robot_config, 0.0) {
                return Err(Error::invalid(format!(
                    "warp output for pose '{}' violates the limits of '{}'",
                    p.name,
                    robot.name()
                )));
            }
            Ok(CalibrationSample {
                pose_name: p.name,
                human_config: p.human_config,
                robot_config,
                active_fingers: p.active_fingers,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationDataset::new(human, robot, samples)
}

/// Steps per keyframe-to-keyframe segment of the sweep.
pub const SWEEP_SEGMENT_STEPS: usize = 16;
pub const SWEEP_LOOPS: usize = 3;

/// Keyframe order of one sweep loop, by pose name.
fn sweep_order() -> Vec<String> {
    let mut order: Vec<String> = [
        "open", "spread", "adduct", "open", "relaxed", "half_fist", "fist", "half_fist", "open",
        "thumb_out", "thumb_mid", "thumb_palm_base", "thumb_mid", "open",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    for f in LONG_FINGERS {
        for tag in ["far", "mid", "near", "mid", "far"] {
            order.push(format!("pinch_{tag}_{f}"));
        }
        order.extend(["open".into(), format!("tabletop_{f}"), "open".into(), format!("hook_{f}"), "open".into()]);
    }
    order
}

/// A human trajectory that repeatedly sweeps through every calibration pose
/// family, moving between keyframes with smooth-step interpolation. Each loop
/// uses freshly jittered keyframes.
pub fn synthetic_sweep_trajectory(human: &HandModel, seed: u64) -> Result<Trajectory> {
    let order = sweep_order();
    let mut configs = Vec::new();
    for lap in 0..SWEEP_LOOPS {
        let poses = calibration_poses(human, seed.wrapping_mul(31).wrapping_add(1000 + lap as u64))?;
        let find = |name: &str| {
            poses
                .iter()
                .find(|p| p.name == name)
                .map(|p| p.human_config.clone())
                .expect("sweep keyframes name existing poses")
        };
        let keys: Vec<JointConfig> = order.iter().map(|n| find(n)).collect();
        for pair in keys.windows(2) {
            for k in 0..SWEEP_SEGMENT_STEPS {
                let s = k as f64 / SWEEP_SEGMENT_STEPS as f64;
                let w = s * s * (3.0 - 2.0 * s);
                configs.push(JointConfig(
                    pair[0].0.iter().zip(&pair[1].0).map(|(a, b)| a + w * (b - a)).collect(),
                ));
            }
        }
        if lap + 1 == SWEEP_LOOPS {
            configs.push(keys.last().cloned().expect("sweep has keyframes"));
        }
    }
    let n = configs.len();
    Trajectory::new(configs, Some(human))?.with_timestamps((0..n).map(|i| i as f64 / 30.0).collect())
}
