//! Live retargeting: HKVM base, residual GP correction, constraint projection
//! and smoothing, plus the baseline retargeters behind the same session type.

mod baselines;
mod constraints;
mod filter;

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use baselines::{retarget_gp_direct, retarget_ik, retarget_joint, trajectory_ranges, IkOutput};
pub use constraints::{
    constraint_values, solve_constraints, ConstraintOptions, ConstraintReport, ConstraintSolution,
    CONSTRAINT_TOLERANCE, DEFAULT_CONSTRAINT_DISTANCE,
};
pub use filter::{smooth, validate_smoothing, DEFAULT_SMOOTHING};

use crate::calibration::GpBundle;
use crate::error::{Error, Result};
use crate::gp::{angle_map, v_map};
use crate::hand::{Finger, HandModel, JointConfig, KeypointVectorSpec};
use crate::hkvm::{solve_hkvm, HkvmParams, WarmStart};
use crate::optim::{LsqOptions, SolveStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetargeterKind {
    Joint,
    Ik,
    Hkvm,
    GpDirect,
    ResGp,
}

impl RetargeterKind {
    pub const ALL: [RetargeterKind; 5] = [
        RetargeterKind::Joint,
        RetargeterKind::Ik,
        RetargeterKind::Hkvm,
        RetargeterKind::GpDirect,
        RetargeterKind::ResGp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RetargeterKind::Joint => "joint",
            RetargeterKind::Ik => "ik",
            RetargeterKind::Hkvm => "hkvm",
            RetargeterKind::GpDirect => "gp_direct",
            RetargeterKind::ResGp => "res_gp",
        }
    }

    /// Display label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            RetargeterKind::Joint => "Joint",
            RetargeterKind::Ik => "IK",
            RetargeterKind::Hkvm => "HKVM",
            RetargeterKind::GpDirect => "GP",
            RetargeterKind::ResGp => "Res-GP",
        }
    }

    pub fn needs_bundle(self) -> bool {
        matches!(self, RetargeterKind::GpDirect | RetargeterKind::ResGp)
    }
}

impl fmt::Display for RetargeterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RetargeterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RetargeterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!("unknown retargeter '{s}' (expected joint, ik, hkvm, gp_direct or res_gp)"))
            })
    }
}

/// Picks the representative of each angle (mod 2 pi) nearest its joint's
/// limits, then clamps.
pub(crate) fn wrap_into_limits(robot: &HandModel, q: &JointConfig) -> JointConfig {
    JointConfig(
        q.0.iter()
            .zip(robot.limits())
            .map(|(&a, [lo, hi])| {
                let dist = |v: f64| (lo - v).max(v - hi).max(0.0);
                [a, a - TAU, a + TAU]
                    .into_iter()
                    .min_by(|x, y| dist(*x).total_cmp(&dist(*y)))
                    .expect("three candidates")
                    .clamp(lo, hi)
            })
            .collect(),
    )
}

/// Models shared read-only by every session.
#[derive(Clone, Debug)]
pub struct RetargetModels {
    pub human: HandModel,
    pub robot: HandModel,
    pub bundle: Option<GpBundle>,
}

impl RetargetModels {
    /// Checks the bundle (if any) against the hands; returns hash-mismatch warnings.
    pub fn new(human: HandModel, robot: HandModel, bundle: Option<GpBundle>) -> Result<(Arc<Self>, Vec<String>)> {
        let warnings = match &bundle {
            Some(b) => {
                b.validate()?;
                b.validate_against(&human, &robot)?
            }
            None => Vec::new(),
        };
        Ok((Arc::new(RetargetModels { human, robot, bundle }), warnings))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub kind: RetargeterKind,
    /// Weight of the newest constrained command in the smoothing filter, (0, 1].
    pub smoothing: f64,
    /// Thumb-to-fingertip distance held by active constraints, m.
    pub constraint_distance: f64,
    pub constraint_tolerance: f64,
    pub hkvm: HkvmParams,
    pub keypoints: KeypointVectorSpec,
    /// Start each solve from the previous output instead of from scratch.
    pub warm_start: bool,
    /// Human joint ranges for the joint rescaling baseline; the human model's
    /// limits when absent.
    pub joint_ranges: Option<Vec<[f64; 2]>>,
    /// Wall-clock budget for the constraint projection, seconds.
    pub constraint_budget: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            kind: RetargeterKind::Hkvm,
            smoothing: DEFAULT_SMOOTHING,
            constraint_distance: DEFAULT_CONSTRAINT_DISTANCE,
            constraint_tolerance: CONSTRAINT_TOLERANCE,
            hkvm: HkvmParams::default(),
            keypoints: KeypointVectorSpec::default(),
            warm_start: true,
            joint_ranges: None,
            constraint_budget: 0.3,
        }
    }
}

impl SessionConfig {
    /// Defaults for `kind`; GP kinds take the HKVM settings the bundle was
    /// trained against.
    pub fn for_kind(kind: RetargeterKind, bundle: Option<&GpBundle>) -> Self {
        let mut c = SessionConfig { kind, ..Default::default() };
        if let Some(b) = bundle {
            c.hkvm = b.hkvm.clone();
            c.keypoints = b.keypoints.clone();
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        validate_smoothing(self.smoothing)?;
        if !(self.constraint_distance > 0.0 && self.constraint_distance.is_finite()) {
            return Err(Error::invalid(format!(
                "constraint distance must be positive, got {}",
                self.constraint_distance
            )));
        }
        if !(self.constraint_tolerance > 0.0) {
            return Err(Error::invalid("constraint tolerance must be positive"));
        }
        if !(self.constraint_budget > 0.0) {
            return Err(Error::invalid("constraint budget must be positive"));
        }
        self.hkvm.validate()
    }
}

/// Seconds spent in each stage of one tick.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    /// HKVM solve, or the whole baseline retargeter.
    pub base: f64,
    /// Posterior means of the four finger GPs.
    pub gp: f64,
    /// Angle reconstruction and limit handling.
    pub reconstruct: f64,
    pub constraints: f64,
    pub smoothing: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultStatus {
    /// Status of the HKVM or IK solve, where one ran.
    pub solver: Option<SolveStatus>,
    /// Fingers whose GP output could not be turned into angles; they use the
    /// base retargeter's angles instead.
    pub fallback_fingers: Vec<Finger>,
    /// Joints mapped to the robot midpoint because their human range has no width.
    pub degenerate_joints: Vec<usize>,
    pub constraints: Vec<ConstraintReport>,
    pub constraints_infeasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetargetResult {
    /// Desired configuration before constraint projection.
    pub q_d: JointConfig,
    /// Configuration after constraint projection.
    pub q_c: JointConfig,
    /// Smoothed command sent to the robot.
    pub q_target: JointConfig,
    pub timings: StageTimings,
    pub status: ResultStatus,
}

/// Per-operator state: warm start, active constraints and filter state.
/// Ticks are strictly sequential.
#[derive(Clone, Debug)]
pub struct RetargetSession {
    config: SessionConfig,
    models: Arc<RetargetModels>,
    warm: WarmStart,
    constrained: BTreeSet<Finger>,
    filter_state: Option<JointConfig>,
}

impl RetargetSession {
    pub fn new(models: Arc<RetargetModels>, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        if config.kind.needs_bundle() {
            let bundle = models
                .bundle
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("retargeter {} needs a trained bundle", config.kind)))?;
            if config.kind == RetargeterKind::GpDirect && bundle.direct.is_none() {
                return Err(Error::invalid("bundle has no direct GP models; calibrate with direct models enabled"));
            }
        }
        if config.kind == RetargeterKind::Joint {
            if models.human.dof() != models.robot.dof() {
                return Err(Error::invalid("joint rescaling needs hands with equal joint counts"));
            }
            if let Some(r) = &config.joint_ranges {
                if r.len() != models.human.dof() {
                    return Err(Error::invalid(format!(
                        "{} joint ranges given for {} human joints",
                        r.len(),
                        models.human.dof()
                    )));
                }
            }
        }
        Ok(RetargetSession {
            config,
            models,
            warm: WarmStart::cold(),
            constrained: BTreeSet::new(),
            filter_state: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn models(&self) -> &Arc<RetargetModels> {
        &self.models
    }

    pub fn kind(&self) -> RetargeterKind {
        self.config.kind
    }

    pub fn constrained(&self) -> Vec<Finger> {
        self.constrained.iter().copied().collect()
    }

    /// Turns the thumb constraint for `f` on or off from the next tick.
    pub fn set_constraint(&mut self, f: Finger, on: bool) -> Result<()> {
        if f == Finger::Thumb {
            return Err(Error::invalid("constraints pair the thumb with index, middle or ring"));
        }
        if on {
            self.constrained.insert(f);
        } else {
            self.constrained.remove(&f);
        }
        Ok(())
    }

    /// Replaces the configuration, keeping constraints and filter state but
    /// dropping the warm start when the retargeter changes.
    pub fn reconfigure(&mut self, config: SessionConfig) -> Result<()> {
        let kind_changed = config.kind != self.config.kind;
        let fresh = RetargetSession::new(self.models.clone(), config)?;
        self.config = fresh.config;
        if kind_changed {
            self.warm = WarmStart::cold();
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.warm = WarmStart::cold();
        self.filter_state = None;
    }

    fn start(&self) -> WarmStart {
        if self.config.warm_start {
            self.warm.clone()
        } else {
            WarmStart::cold()
        }
    }

    /// Runs one tick on the human configuration `q_h`.
    pub fn step(&mut self, q_h: &JointConfig) -> Result<RetargetResult> {
        let t0 = Instant::now();
        let models = self.models.clone();
        let (human, robot) = (&models.human, &models.robot);
        human.check_config(q_h)?;
        let mut timings = StageTimings::default();
        let mut status = ResultStatus::default();

        let q_d = match self.config.kind {
            RetargeterKind::Hkvm => {
                let sol = solve_hkvm(robot, human, q_h, &self.start(), &self.config.hkvm, &self.config.keypoints)?;
                status.solver = Some(sol.status);
                timings.base = t0.elapsed().as_secs_f64();
                self.warm = WarmStart(Some(sol.q.clone()));
                sol.q
            }
            RetargeterKind::ResGp => {
                let bundle = models.bundle.as_ref().expect("checked at construction");
                let sol = solve_hkvm(robot, human, q_h, &self.start(), &self.config.hkvm, &self.config.keypoints)?;
                status.solver = Some(sol.status);
                timings.base = t0.elapsed().as_secs_f64();
                let t_gp = Instant::now();
                let residuals = Finger::ALL
                    .into_iter()
                    .map(|f| bundle.residual_gp(f).posterior_mean(q_h.finger(human, f)))
                    .collect::<Result<Vec<_>>>()?;
                timings.gp = t_gp.elapsed().as_secs_f64();
                let t_rec = Instant::now();
                let mut q = sol.q.clone();
                for (f, res) in Finger::ALL.into_iter().zip(residuals) {
                    let m = v_map(sol.q.finger(robot, f)) + res;
                    match angle_map(&m) {
                        Ok(angles) => q.finger_mut(robot, f).copy_from_slice(&angles),
                        Err(Error::DegenerateRow { .. }) => status.fallback_fingers.push(f),
                        Err(e) => return Err(e),
                    }
                }
                let q = wrap_into_limits(robot, &q);
                timings.reconstruct = t_rec.elapsed().as_secs_f64();
                self.warm = WarmStart(Some(sol.q));
                q
            }
            RetargeterKind::Joint => {
                let ranges = self.config.joint_ranges.clone().unwrap_or_else(|| human.limits());
                let (q, degenerate) = retarget_joint(q_h, &ranges, &robot.limits())?;
                status.degenerate_joints = degenerate;
                timings.base = t0.elapsed().as_secs_f64();
                q
            }
            RetargeterKind::Ik => {
                let start = self.start();
                let out = retarget_ik(human, robot, q_h, start.0.as_ref(), &LsqOptions::default())?;
                timings.base = t0.elapsed().as_secs_f64();
                self.warm = WarmStart(Some(out.q.clone()));
                out.q
            }
            RetargeterKind::GpDirect => {
                let bundle = models.bundle.as_ref().expect("checked at construction");
                let gps = bundle.direct.as_ref().expect("checked at construction");
                let fallback = self.start().initial(robot);
                let (q, fell_back) = retarget_gp_direct(human, robot, q_h, gps, &fallback)?;
                status.fallback_fingers = fell_back;
                timings.gp = t0.elapsed().as_secs_f64();
                self.warm = WarmStart(Some(q.clone()));
                q
            }
        };

        let t_con = Instant::now();
        let fingers = self.constrained();
        let q_c = if fingers.is_empty() {
            q_d.clone()
        } else {
            let opts = ConstraintOptions {
                distance: self.config.constraint_distance,
                tolerance: self.config.constraint_tolerance,
                deadline: t_con.checked_add(Duration::from_secs_f64(self.config.constraint_budget)),
            };
            let sol = solve_constraints(robot, &q_d, &fingers, &opts)?;
            status.constraints = sol.pairs;
            status.constraints_infeasible = sol.infeasible;
            sol.q
        };
        timings.constraints = t_con.elapsed().as_secs_f64();

        let t_s = Instant::now();
        let q_target = smooth(self.filter_state.as_ref(), &q_c, self.config.smoothing);
        self.filter_state = Some(q_target.clone());
        timings.smoothing = t_s.elapsed().as_secs_f64();
        timings.total = t0.elapsed().as_secs_f64();

        Ok(RetargetResult { q_d, q_c, q_target, timings, status })
    }
}
