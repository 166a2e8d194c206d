use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{
    build_direct_targets, hkvm_labels, residual_targets_from_labels, CalibrationDataset, FingerTargets,
};
use crate::error::{read_file, write_file, Error, Result};
use crate::gp::{train_finger_gp, TrainOptions, TrainReport, TrainedFingerGp};
use crate::hand::{Finger, HandModel, KeypointVectorSpec, ModelRef};
use crate::hkvm::HkvmParams;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub hkvm: HkvmParams,
    pub keypoints: KeypointVectorSpec,
    pub train: TrainOptions,
    /// Also fit GPs that predict robot angles directly (the GP baseline).
    pub direct: bool,
}

/// Four trained per-finger residual GPs plus everything needed to reproduce
/// the HKVM base they were trained against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpBundle {
    pub schema_version: u32,
    pub human_model: ModelRef,
    pub robot_model: ModelRef,
    pub hkvm: HkvmParams,
    pub keypoints: KeypointVectorSpec,
    pub train: TrainOptions,
    /// One residual GP per finger, in thumb, index, middle, ring order.
    pub residual: Vec<TrainedFingerGp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct: Option<Vec<TrainedFingerGp>>,
}

impl GpBundle {
    pub fn residual_gp(&self, f: Finger) -> &TrainedFingerGp {
        &self.residual[f.index()]
    }

    pub fn direct_gp(&self, f: Finger) -> Option<&TrainedFingerGp> {
        self.direct.as_ref().map(|d| &d[f.index()])
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: BUNDLE_SCHEMA_VERSION,
            });
        }
        self.hkvm.validate()?;
        let check = |set: &[TrainedFingerGp], what: &str| -> Result<()> {
            let fingers: Vec<Finger> = set.iter().map(TrainedFingerGp::finger).collect();
            if fingers != Finger::ALL {
                return Err(Error::invalid(format!(
                    "bundle {what} models must cover thumb, index, middle, ring in order"
                )));
            }
            Ok(())
        };
        check(&self.residual, "residual")?;
        if let Some(d) = &self.direct {
            check(d, "direct")?;
        }
        Ok(())
    }

    /// Checks that the bundle fits the models; returns hash-mismatch warnings.
    pub fn validate_against(&self, human: &HandModel, robot: &HandModel) -> Result<Vec<String>> {
        for gp in self.residual.iter().chain(self.direct.iter().flatten()) {
            let f = gp.finger();
            if gp.hyper().input_dim() != human.finger_dof(f) || gp.hyper().num_tasks() != 2 * robot.finger_dof(f) {
                return Err(Error::invalid(format!(
                    "bundle model for the {f} finger has {} inputs and {} outputs; the hands need {} and {}",
                    gp.hyper().input_dim(),
                    gp.hyper().num_tasks(),
                    human.finger_dof(f),
                    2 * robot.finger_dof(f)
                )));
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
        let bundle: GpBundle = serde_json::from_str(&text).map_err(|e| Error::from_json(path, e))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    /// SHA-256 of the compact serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("bundle serializes");
        hex::encode(Sha256::digest(&compact))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &(self.to_json() + "\n"))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub residual: Vec<TrainReport>,
    pub direct: Option<Vec<TrainReport>>,
    /// Seconds spent computing HKVM labels and fitting all GPs.
    pub wall_time: f64,
    pub warnings: Vec<String>,
}

fn train_all(targets: Vec<FingerTargets>, opts: &TrainOptions) -> Result<Vec<(TrainedFingerGp, TrainReport)>> {
    // Fingers are independent problems; each gets its own seed.
    std::thread::scope(|scope| {
        let handles: Vec<_> = targets
            .into_iter()
            .map(|t| {
                let opts = TrainOptions {
                    seed: opts.seed.wrapping_add(t.finger.index() as u64),
                    ..opts.clone()
                };
                scope.spawn(move || {
                    let tasks = t.num_tasks();
                    let flat = t.task_major();
                    train_finger_gp(t.finger, t.inputs, flat, tasks, &opts)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

/// Trains the four residual GPs (and optionally the direct GPs) on `dataset`.
pub fn calibrate(
    dataset: &CalibrationDataset,
    human: &HandModel,
    robot: &HandModel,
    config: &CalibrationConfig,
) -> Result<(GpBundle, CalibrationReport)> {
    let start = Instant::now();
    config.hkvm.validate()?;
    config.train.validate()?;
    dataset.validate()?;
    let warnings = dataset.validate_against(human, robot)?;
    for w in &warnings {
        log::warn!("{w}");
    }

    let labels = hkvm_labels(dataset, human, robot, &config.hkvm, &config.keypoints)?;
    let residual_targets = Finger::ALL
        .into_iter()
        .map(|f| residual_targets_from_labels(dataset, human, robot, &labels, f))
        .collect::<Result<Vec<_>>>()?;
    let (residual, residual_reports): (Vec<_>, Vec<_>) =
        train_all(residual_targets, &config.train)?.into_iter().unzip();

    let (direct, direct_reports) = if config.direct {
        let targets = Finger::ALL
            .into_iter()
            .map(|f| build_direct_targets(dataset, human, robot, f))
            .collect::<Result<Vec<_>>>()?;
        let opts = TrainOptions { learn_mean: true, ..config.train.clone() };
        let (gps, reports): (Vec<_>, Vec<_>) = train_all(targets, &opts)?.into_iter().unzip();
        (Some(gps), Some(reports))
    } else {
        (None, None)
    };

    let bundle = GpBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        human_model: ModelRef::of(human),
        robot_model: ModelRef::of(robot),
        hkvm: config.hkvm.clone(),
        keypoints: config.keypoints.clone(),
        train: config.train.clone(),
        residual,
        direct,
    };
    let report = CalibrationReport {
        residual: residual_reports,
        direct: direct_reports,
        wall_time: start.elapsed().as_secs_f64(),
        warnings,
    };
    Ok((bundle, report))
}
