//! Ordered sequences of hand configurations, as read from and written to disk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};
use crate::hand::{HandModel, JointConfig, ModelRef};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelRef>,
    pub configs: Vec<JointConfig>,
    /// Seconds, one per configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(configs: Vec<JointConfig>, model: Option<&HandModel>) -> Result<Self> {
        let t = Trajectory {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            model: model.map(ModelRef::of),
            configs,
            timestamps: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_timestamps(mut self, timestamps: Vec<f64>) -> Result<Self> {
        self.timestamps = Some(timestamps);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.configs.first().map_or(0, JointConfig::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != TRAJECTORY_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: self.schema_version,
                expected: TRAJECTORY_SCHEMA_VERSION,
            });
        }
        if self.configs.is_empty() {
            return Err(Error::invalid("trajectory has no configurations"));
        }
        let dim = self.dim();
        for (i, q) in self.configs.iter().enumerate() {
            if q.len() != dim {
                return Err(Error::invalid(format!(
                    "configuration {i} has {} angles, expected {dim}",
                    q.len()
                )));
            }
            if q.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("configuration {i} has a non-finite angle")));
            }
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != self.configs.len() {
                return Err(Error::invalid(format!(
                    "{} timestamps for {} configurations",
                    ts.len(),
                    self.configs.len()
                )));
            }
            if ts.iter().any(|t| !t.is_finite()) || ts.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::invalid("timestamps must be finite and non-decreasing"));
            }
        }
        Ok(())
    }

    /// Checks the dimension against `model` and returns a warning if the
    /// recorded model reference differs.
    pub fn check_model(&self, model: &HandModel) -> Result<Option<String>> {
        if self.dim() != model.dof() {
            return Err(Error::invalid(format!(
                "trajectory has {} angles per configuration but model '{}' has {} joints",
                self.dim(),
                model.name(),
                model.dof()
            )));
        }
        Ok(self.model.as_ref().and_then(|r| r.mismatch(model, "trajectory")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_file(path)?;
        let t: Trajectory = serde_json::from_str(&text).map_err(|e| Error::from_json(path, e))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trajectory serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &(self.to_json() + "\n"))
    }
}
