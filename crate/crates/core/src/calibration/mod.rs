//! Calibration data, residual targets, synthetic poses and GP training.

mod bundle;
mod dataset;
mod synth;

pub use bundle::{calibrate, CalibrationConfig, CalibrationReport, GpBundle, BUNDLE_SCHEMA_VERSION};
pub use dataset::{
    build_direct_targets, build_residual_targets, hkvm_labels, residual_targets_from_labels, CalibrationDataset,
    CalibrationSample, FingerTargets, DATASET_SCHEMA_VERSION,
};
pub use synth::{
    apply_warp, calibration_poses, generate_synthetic_calibration, synthetic_sweep_trajectory, GroundTruthWarp,
    PoseTemplate, POSE_JITTER, SWEEP_LOOPS, SWEEP_SEGMENT_STEPS,
};
