//! Per-finger residual Gaussian processes over joint angles.

mod angles;
mod kernel;
mod model;
mod train;

pub use angles::{angle_map, from_tasks, to_tasks, v_map, AngleMatrix, FingerResidual, MIN_ROW_NORM};
pub use kernel::{angular_distance, kernel, kernel_matrix, kernel_vector};
pub use model::{build_covariance, mll, GpHyperparams, TrainedFingerGp, GP_SCHEMA_VERSION, JITTER_MAX, JITTER_START};
pub use train::{targets_from_rows, train_finger_gp, Adam, NegMll, ParamLayout, TrainOptions, TrainReport};
