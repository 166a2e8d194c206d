// Parameter checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod fixtures;
pub mod gp;
pub mod hand;
pub mod hkvm;
pub mod ik;
pub mod optim;
pub mod retarget;
pub mod trajectory;
pub mod workspace;

pub use error::{Error, Result};
