//! Hand kinematics: model description, forward kinematics and keypoint vectors.

mod keypoints;
mod kinematics;
mod model;

pub use keypoints::{keypoint_vector, pair_jacobian, pair_vector, KeypointVectorSpec};
pub use kinematics::{
    chain_points, finger_tip, finger_tip_with_jacobian, forward_kinematics, forward_kinematics_with_jacobian,
    KeypointPositions, TipJacobians,
};
pub use model::{
    Finger, FingerChain, HandModel, JointConfig, JointSpec, Keypoint, ModelRef, Pose, MODEL_SCHEMA_VERSION,
};
