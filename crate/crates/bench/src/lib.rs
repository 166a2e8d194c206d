//! Shared inputs for the benchmarks.

use std::sync::Arc;

use respilot_core::calibration::{
    calibrate, generate_synthetic_calibration, synthetic_sweep_trajectory, CalibrationConfig, CalibrationDataset,
    GroundTruthWarp,
};
use respilot_core::hand::{HandModel, JointConfig, KeypointVectorSpec};
use respilot_core::hkvm::HkvmParams;
use respilot_core::retarget::RetargetModels;

pub struct Setup {
    pub models: Arc<RetargetModels>,
    pub dataset: CalibrationDataset,
    /// Human configurations in playback order.
    pub path: Vec<JointConfig>,
}

/// Bundled hands, the seed-0 synthetic set and a bundle trained on it.
pub fn setup() -> Setup {
    let human = HandModel::bundled_human();
    let robot = HandModel::bundled_robot();
    let dataset = generate_synthetic_calibration(
        0,
        &GroundTruthWarp::expansion(),
        &human,
        &robot,
        &HkvmParams::default(),
        &KeypointVectorSpec::default(),
    )
    .expect("synthetic set");
    let (bundle, _) = calibrate(&dataset, &human, &robot, &CalibrationConfig::default()).expect("calibration");
    let path = synthetic_sweep_trajectory(&human, 0).expect("sweep").configs;
    let models = RetargetModels::new(human, robot, Some(bundle)).expect("models").0;
    Setup { models, dataset, path }
}
