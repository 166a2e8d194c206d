use crate::error::{Error, Result};
use crate::hand::JointConfig;

pub const DEFAULT_SMOOTHING: f64 = 0.01;

pub fn validate_smoothing(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("smoothing coefficient must be in (0, 1], got {lambda}")))
    }
}

/// One step of exponential smoothing, `lambda * q_c + (1 - lambda) * previous`.
/// A missing previous command counts as all zeros.
pub fn smooth(previous: Option<&JointConfig>, q_c: &JointConfig, lambda: f64) -> JointConfig {
    match previous {
        Some(p) => {
            assert_eq!(p.len(), q_c.len(), "filter state has the wrong dimension");
            JointConfig(p.0.iter().zip(&q_c.0).map(|(p, c)| lambda * c + (1.0 - lambda) * p).collect())
        }
        None => JointConfig(q_c.0.iter().map(|c| lambda * c).collect()),
    }
}
