use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};
use crate::gp::{to_tasks, v_map, FingerResidual};
use crate::hand::{Finger, HandModel, JointConfig, KeypointVectorSpec, ModelRef};
use crate::hkvm::{solve_hkvm, HkvmParams, WarmStart};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Slack allowed when checking that stored configurations respect limits.
const LIMIT_TOL: f64 = 1e-9;

/// One paired human/robot pose. Only the robot fingers listed as active were
/// labeled deliberately; the rest of the robot configuration is filler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub pose_name: String,
    pub human_config: JointConfig,
    pub robot_config: JointConfig,
    pub active_fingers: Vec<Finger>,
}

impl CalibrationSample {
    pub fn is_active(&self, f: Finger) -> bool {
        self.active_fingers.contains(&f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDataset {
    pub schema_version: u32,
    pub human_model: ModelRef,
    pub robot_model: ModelRef,
    pub samples: Vec<CalibrationSample>,
}

impl CalibrationDataset {
    pub fn new(human: &HandModel, robot: &HandModel, samples: Vec<CalibrationSample>) -> Result<Self> {
        let d = CalibrationDataset {
            schema_version: DATASET_SCHEMA_VERSION,
            human_model: ModelRef::of(human),
            robot_model: ModelRef::of(robot),
            samples,
        };
        d.validate()?;
        d.validate_against(human, robot)?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn active_count(&self, f: Finger) -> usize {
        self.samples.iter().filter(|s| s.is_active(f)).count()
    }

    /// Checks the invariants that do not depend on the models.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        if self.samples.is_empty() {
            return Err(Error::NoData("calibration dataset has no samples".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.active_fingers.is_empty() {
                return Err(Error::invalid(format!(
                    "sample {i} ('{}') has no active fingers",
                    s.pose_name
                )));
            }
            let mut seen = s.active_fingers.clone();
            seen.sort_by_key(|f| f.index());
            seen.dedup();
            if seen.len() != s.active_fingers.len() {
                return Err(Error::invalid(format!(
                    "sample {i} ('{}') lists a finger twice",
                    s.pose_name
                )));
            }
        }
        if let Some(f) = Finger::ALL.into_iter().find(|&f| self.active_count(f) == 0) {
            return Err(Error::invalid(format!(
                "the {f} finger is never active, so its model cannot be trained"
            )));
        }
        Ok(())
    }

    /// Checks dimensions and joint limits against the models and returns
    /// warnings for model-hash mismatches.
    pub fn validate_against(&self, human: &HandModel, robot: &HandModel) -> Result<Vec<String>> {
        for (i, s) in self.samples.iter().enumerate() {
            for (q, model, role) in [(&s.human_config, human, "human"), (&s.robot_config, robot, "robot")] {
                model.check_config(q).map_err(|e| {
                    Error::invalid(format!("sample {i} ('{}') {role} config: {e}", s.pose_name))
                })?;
                if !model.within_limits(q, LIMIT_TOL) {
                    return Err(Error::invalid(format!(
                        "sample {i} ('{}') {role} config is outside the joint limits of '{}'",
                        s.pose_name,
                        model.name()
                    )));
                }
            }
        }
        Ok([
            self.human_model.mismatch(human, "human"),
            self.robot_model.mismatch(robot, "robot"),
        ]
        .into_iter()
        .flatten()
        .collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_file(path)?;
        Self::from_json_str(&text, path)
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let dataset: CalibrationDataset = match serde_json::from_str(text) {
            Ok(d) => d,
            Err(e) => return Err(name_failing_sample(text, origin, e)),
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &(self.to_json() + "\n"))
    }
}

/// Rewrites a deserialization error so it names the offending sample when
/// the problem is inside one.
fn name_failing_sample(text: &str, origin: &Path, err: serde_json::Error) -> Error {
    let mut out = Error::from_json(origin, err);
    let Ok(value) = serde_json::from_str::<serde_json::Value>(text) else {
        return out;
    };
    let Some(samples) = value.get("samples").and_then(|s| s.as_array()) else {
        return out;
    };
    for (i, raw) in samples.iter().enumerate() {
        if let Err(e) = serde_json::from_value::<CalibrationSample>(raw.clone()) {
            let name = raw.get("pose_name").and_then(|n| n.as_str()).unwrap_or("<unnamed>");
            if let Error::Parse { message, .. } = &mut out {
                *message = format!("sample {i} ('{name}'): {e}");
            }
            break;
        }
    }
    out
}

/// Training data for one finger: inputs are human finger angles, targets are
/// the task-major flattening of the |f| x 2 outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerTargets {
    pub finger: Finger,
    pub sample_indices: Vec<usize>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<FingerResidual>,
}

impl FingerTargets {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_tasks(&self) -> usize {
        self.outputs.first().map_or(0, |m| 2 * m.nrows())
    }

    /// Targets ordered task-major: all samples of output 0, then output 1, ...
    pub fn task_major(&self) -> Vec<f64> {
        let c = self.len();
        let t = self.num_tasks();
        let mut out = vec![0.0; c * t];
        for (a, m) in self.outputs.iter().enumerate() {
            for (j, v) in to_tasks(m).into_iter().enumerate() {
                out[j * c + a] = v;
            }
        }
        out
    }
}

/// Cold-started, deadline-free HKVM output for every sample.
pub fn hkvm_labels(
    dataset: &CalibrationDataset,
    human: &HandModel,
    robot: &HandModel,
    params: &HkvmParams,
    spec: &KeypointVectorSpec,
) -> Result<Vec<JointConfig>> {
    let params = params.without_deadline();
    dataset
        .samples
        .iter()
        .map(|s| solve_hkvm(robot, human, &s.human_config, &WarmStart::cold(), &params, spec).map(|sol| sol.q))
        .collect()
}

fn collect_targets(
    dataset: &CalibrationDataset,
    human: &HandModel,
    robot: &HandModel,
    f: Finger,
    output: impl Fn(usize, &CalibrationSample) -> FingerResidual,
) -> Result<FingerTargets> {
    let mut t = FingerTargets {
        finger: f,
        sample_indices: Vec::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    for (i, s) in dataset.samples.iter().enumerate().filter(|(_, s)| s.is_active(f)) {
        robot.check_config(&s.robot_config)?;
        t.sample_indices.push(i);
        t.inputs.push(s.human_config.finger(human, f).to_vec());
        t.outputs.push(output(i, s));
    }
    if t.is_empty() {
        return Err(Error::NoData(format!("the {f} finger is not active in any sample")));
    }
    Ok(t)
}

/// Residual targets `V(q_r[f]) - V(q_o*[f])` for the samples where `f` is
/// active, given precomputed HKVM outputs (see [`hkvm_labels`]).
pub fn residual_targets_from_labels(
    dataset: &CalibrationDataset,
    human: &HandModel,
    robot: &HandModel,
    hkvm: &[JointConfig],
    f: Finger,
) -> Result<FingerTargets> {
    if hkvm.len() != dataset.len() {
        return Err(Error::invalid("one HKVM output per sample is required"));
    }
    collect_targets(dataset, human, robot, f, |i, s| {
        v_map(s.robot_config.finger(robot, f)) - v_map(hkvm[i].finger(robot, f))
    })
}

/// Residual targets for finger `f`, running the solver cold on every sample.
pub fn build_residual_targets(
    dataset: &CalibrationDataset,
    human: &HandModel,
    robot: &HandModel,
    params: &HkvmParams,
    spec: &KeypointVectorSpec,
    f: Finger,
) -> Result<FingerTargets> {
    if dataset.active_count(f) == 0 {
        return Err(Error::NoData(format!("the {f} finger is not active in any sample")));
    }
    let labels = hkvm_labels(dataset, human, robot, params, spec)?;
    residual_targets_from_labels(dataset, human, robot, &labels, f)
}

/// Targets `V(q_r[f])` for a GP that maps human angles to robot angles directly.
pub fn build_direct_targets(
    dataset: &CalibrationDataset,
    human: &HandModel,
    robot: &HandModel,
    f: Finger,
) -> Result<FingerTargets> {
    collect_targets(dataset, human, robot, f, |_, s| v_map(s.robot_config.finger(robot, f)))
}
