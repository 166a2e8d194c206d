use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use super::kinematics::{forward_kinematics, KeypointPositions, TipJacobians};
use super::model::{Finger, HandModel, JointConfig, Keypoint};
use crate::error::{read_file, Error, Result};

/// Ordered list of keypoint pairs; vector `i` points from `pairs[i].0` to `pairs[i].1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointVectorSpec {
    pairs: Vec<(Keypoint, Keypoint)>,
}

impl Default for KeypointVectorSpec {
    /// Palm to each fingertip, thumb tip to each other fingertip, and the
    /// three pairs among index, middle and ring tips.
    fn default() -> Self {
        use Finger::*;
        use Keypoint::{Palm, Tip};
        KeypointVectorSpec {
            pairs: vec![
                (Palm, Tip(Thumb)),
                (Palm, Tip(Index)),
                (Palm, Tip(Middle)),
                (Palm, Tip(Ring)),
                (Tip(Thumb), Tip(Index)),
                (Tip(Thumb), Tip(Middle)),
                (Tip(Thumb), Tip(Ring)),
                (Tip(Index), Tip(Middle)),
                (Tip(Middle), Tip(Ring)),
                (Tip(Index), Tip(Ring)),
            ],
        }
    }
}

impl KeypointVectorSpec {
    pub fn new(pairs: Vec<(Keypoint, Keypoint)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("keypoint vector spec needs at least one pair"));
        }
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert(*p) {
                return Err(Error::invalid(format!("keypoint pair ({}, {}) repeats", p.0, p.1)));
            }
        }
        Ok(KeypointVectorSpec { pairs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        #[derive(Deserialize)]
        struct File {
            pairs: Vec<(Keypoint, Keypoint)>,
        }
        let file: File =
            serde_json::from_str(&read_file(path)?).map_err(|e| Error::from_json(path, e))?;
        Self::new(file.pairs)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Keypoint, Keypoint)] {
        &self.pairs
    }

    pub fn pair(&self, i: usize) -> Result<(Keypoint, Keypoint)> {
        self.pairs.get(i).copied().ok_or_else(|| {
            Error::invalid(format!("pair index {i} out of range (H = {})", self.pairs.len()))
        })
    }

    /// Index of the pair thumb tip -> `f` tip, if present.
    pub fn thumb_pair(&self, f: Finger) -> Option<usize> {
        self.pairs
            .iter()
            .position(|&p| p == (Keypoint::Tip(Finger::Thumb), Keypoint::Tip(f)))
    }
}

/// `pos[b] - pos[a]` for an already evaluated set of positions.
pub fn pair_vector(pos: &KeypointPositions, pair: (Keypoint, Keypoint)) -> Vector3<f64> {
    pos.get(pair.1) - pos.get(pair.0)
}

/// 3 x dof Jacobian of a keypoint vector.
pub fn pair_jacobian(
    model: &HandModel,
    jac: &TipJacobians,
    pair: (Keypoint, Keypoint),
) -> DMatrix<f64> {
    jac.keypoint_full(model, pair.1) - jac.keypoint_full(model, pair.0)
}

/// Vector `pair_index` of `spec` evaluated at `q`.
pub fn keypoint_vector(
    model: &HandModel,
    q: &JointConfig,
    pair_index: usize,
    spec: &KeypointVectorSpec,
) -> Result<Vector3<f64>> {
    let pair = spec.pair(pair_index)?;
    let pos = forward_kinematics(model, q)?;
    Ok(pair_vector(&pos, pair))
}
