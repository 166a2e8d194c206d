use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_file, write_file, Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

const HUMAN_PROXY_JSON: &str = include_str!("../../models/human_proxy.json");
const ROBOT_ALLEGRO_LIKE_JSON: &str = include_str!("../../models/robot_allegro_like.json");

/// The four fingers shared by the human and robot hands, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finger {
    Thumb,
    Index,
    Middle,
    Ring,
}

impl Finger {
    pub const ALL: [Finger; 4] = [Finger::Thumb, Finger::Index, Finger::Middle, Finger::Ring];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Index => "index",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
        }
    }
}

impl fmt::Display for Finger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Finger {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Finger::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown finger '{s}'")))
    }
}

/// A labeled point on the hand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Keypoint {
    Palm,
    Tip(Finger),
}

impl Keypoint {
    pub fn name(self) -> String {
        match self {
            Keypoint::Palm => "palm".to_string(),
            Keypoint::Tip(f) => format!("{}_tip", f.name()),
        }
    }

    pub fn finger(self) -> Option<Finger> {
        match self {
            Keypoint::Palm => None,
            Keypoint::Tip(f) => Some(f),
        }
    }
}

impl fmt::Display for Keypoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Keypoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "palm" {
            return Ok(Keypoint::Palm);
        }
        s.strip_suffix("_tip")
            .and_then(|f| f.parse().ok())
            .map(Keypoint::Tip)
            .ok_or_else(|| Error::invalid(format!("unknown keypoint '{s}'")))
    }
}

impl Serialize for Keypoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Keypoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rigid transform as translation (m) plus roll/pitch/yaw (rad, fixed-axis XYZ).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Pose {
    pub fn translation(xyz: [f64; 3]) -> Self {
        Pose { xyz, rpy: [0.0; 3] }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [x, y, z] = self.xyz;
        let [r, p, yaw] = self.rpy;
        Isometry3::from_parts(
            Translation3::new(x, y, z),
            UnitQuaternion::from_euler_angles(r, p, yaw),
        )
    }

    fn is_finite(&self) -> bool {
        self.xyz.iter().chain(self.rpy.iter()).all(|v| v.is_finite())
    }

    fn is_identity(&self) -> bool {
        *self == Pose::default()
    }
}

/// One revolute joint. `origin` places the joint frame relative to the end of
/// the previous link (or the finger base for the first joint).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub axis: [f64; 3],
    #[serde(default, skip_serializing_if = "Pose::is_identity")]
    pub origin: Pose,
    pub limits: [f64; 2],
}

/// Serial chain for one finger. After joint `i` rotates, the frame advances by
/// `link_lengths[i]` along its local +x axis. The fingertip keypoint sits at
/// `fingertip_offset` in the frame at the end of the last link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FingerChain {
    pub finger: Finger,
    pub base: Pose,
    pub joints: Vec<JointSpec>,
    pub link_lengths: Vec<f64>,
    pub fingertip_offset: [f64; 3],
}

impl FingerChain {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn chain_length(&self) -> f64 {
        self.link_lengths.iter().map(|l| l.abs()).sum::<f64>()
            + self.joints.iter().map(|j| norm3(j.origin.xyz)).sum::<f64>()
            + norm3(self.fingertip_offset)
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HandModelFile {
    schema_version: u32,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    palm_frame: Pose,
    fingers: Vec<FingerChain>,
}

/// Precomputed transforms, rebuilt whenever a model is constructed.
#[derive(Clone, Debug)]
pub(crate) struct ChainCache {
    pub base: Isometry3<f64>,
    pub origins: Vec<Isometry3<f64>>,
    pub axes: Vec<Unit<Vector3<f64>>>,
    pub offset: Vector3<f64>,
    pub start: usize,
}

/// Kinematic description of a four-finger hand.
///
/// Immutable once constructed; every constructor validates the invariants
/// (four fingers in canonical order, at least one joint each, `lo < hi` for
/// every joint limit).
#[derive(Clone, Debug)]
pub struct HandModel {
    file: HandModelFile,
    pub(crate) palm_inv: Isometry3<f64>,
    pub(crate) chains: Vec<ChainCache>,
    dof: usize,
}

impl PartialEq for HandModel {
    fn eq(&self, other: &Self) -> bool {
        self.file == other.file
    }
}

impl Serialize for HandModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.file.serialize(s)
    }
}

impl<'de> Deserialize<'de> for HandModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = HandModelFile::deserialize(d)?;
        HandModel::from_file(file).map_err(serde::de::Error::custom)
    }
}

impl HandModel {
    pub fn new(
        name: impl Into<String>,
        palm_frame: Pose,
        fingers: Vec<FingerChain>,
    ) -> Result<Self> {
        Self::from_file(HandModelFile {
            schema_version: MODEL_SCHEMA_VERSION,
            name: name.into(),
            description: None,
            palm_frame,
            fingers,
        })
    }

    fn from_file(file: HandModelFile) -> Result<Self> {
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: file.schema_version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        if file.fingers.len() != 4 {
            return Err(Error::invariant(format!(
                "hand model '{}' has {} fingers; exactly 4 are required",
                file.name,
                file.fingers.len()
            )));
        }
        if !file.palm_frame.is_finite() {
            return Err(Error::invariant("palm_frame has non-finite entries"));
        }
        let mut chains = Vec::with_capacity(4);
        let mut start = 0;
        for (i, chain) in file.fingers.iter().enumerate() {
            let expected = Finger::ALL[i];
            if chain.finger != expected {
                return Err(Error::invariant(format!(
                    "finger {i} is '{}', expected '{expected}' (order is thumb, index, middle, ring)",
                    chain.finger
                )));
            }
            if chain.joints.is_empty() {
                return Err(Error::invariant(format!("finger '{expected}' has no joints")));
            }
            if chain.link_lengths.len() != chain.joints.len() {
                return Err(Error::invariant(format!(
                    "finger '{expected}': {} link lengths for {} joints",
                    chain.link_lengths.len(),
                    chain.joints.len()
                )));
            }
            if !chain.base.is_finite()
                || chain.link_lengths.iter().any(|l| !l.is_finite())
                || chain.fingertip_offset.iter().any(|v| !v.is_finite())
            {
                return Err(Error::invariant(format!(
                    "finger '{expected}' has non-finite geometry"
                )));
            }
            let mut origins = Vec::with_capacity(chain.dof());
            let mut axes = Vec::with_capacity(chain.dof());
            for joint in &chain.joints {
                let [lo, hi] = joint.limits;
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::invariant(format!(
                        "joint '{}' of finger '{expected}' has invalid limits [{lo}, {hi}]",
                        joint.name
                    )));
                }
                let axis = Vector3::from(joint.axis);
                if !axis.iter().all(|v| v.is_finite()) || axis.norm() < 1e-9 {
                    return Err(Error::invariant(format!(
                        "joint '{}' of finger '{expected}' has a degenerate axis",
                        joint.name
                    )));
                }
                if !joint.origin.is_finite() {
                    return Err(Error::invariant(format!(
                        "joint '{}' of finger '{expected}' has a non-finite origin",
                        joint.name
                    )));
                }
                origins.push(joint.origin.to_isometry());
                axes.push(Unit::new_normalize(axis));
            }
            chains.push(ChainCache {
                base: chain.base.to_isometry(),
                origins,
                axes,
                offset: Vector3::from(chain.fingertip_offset),
                start,
            });
            start += chain.dof();
        }
        Ok(HandModel {
            palm_inv: file.palm_frame.to_isometry().inverse(),
            dof: start,
            chains,
            file,
        })
    }

    /// The robot model, roughly 1.6 times the human proxy with Allegro-like limits.
    pub fn bundled_robot() -> Self {
        Self::from_json_str(ROBOT_ALLEGRO_LIKE_JSON, "robot_allegro_like.json")
            .expect("bundled robot model is valid")
    }

    /// The human-hand proxy whose joint coordinates stand in for glove readings.
    pub fn bundled_human() -> Self {
        Self::from_json_str(HUMAN_PROXY_JSON, "human_proxy.json")
            .expect("bundled human model is valid")
    }

    /// Looks up a bundled model by name (`human_proxy` or `robot_allegro_like`).
    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "human_proxy" => Some(Self::bundled_human()),
            "robot_allegro_like" => Some(Self::bundled_robot()),
            _ => None,
        }
    }

    pub fn from_json_str(json: &str, origin: impl AsRef<Path>) -> Result<Self> {
        let file: HandModelFile =
            serde_json::from_str(json).map_err(|e| Error::from_json(origin.as_ref(), e))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json_str(&read_file(path)?, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_json())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.file).expect("model serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the compact serialization, used to tie datasets and bundles
    /// to the models they were recorded with.
    pub fn content_hash(&self) -> String {
        let compact = serde_json::to_vec(&self.file).expect("model serializes");
        hex::encode(Sha256::digest(&compact))
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn palm_frame(&self) -> &Pose {
        &self.file.palm_frame
    }

    pub fn fingers(&self) -> &[FingerChain] {
        &self.file.fingers
    }

    pub fn finger(&self, f: Finger) -> &FingerChain {
        &self.file.fingers[f.index()]
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn finger_dof(&self, f: Finger) -> usize {
        self.finger(f).dof()
    }

    /// Index range of finger `f`'s joints inside a full configuration vector.
    pub fn finger_range(&self, f: Finger) -> Range<usize> {
        let start = self.chains[f.index()].start;
        start..start + self.finger_dof(f)
    }

    pub fn limits(&self) -> Vec<[f64; 2]> {
        self.joints().map(|j| j.limits).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.joints().map(|j| j.limits[0]).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.joints().map(|j| j.limits[1]).collect()
    }

    pub fn joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.file.fingers.iter().flat_map(|c| c.joints.iter())
    }

    /// Sum of link lengths, joint offsets and fingertip offset over the longest finger.
    pub fn max_chain_length(&self) -> f64 {
        self.file
            .fingers
            .iter()
            .map(FingerChain::chain_length)
            .fold(0.0, f64::max)
    }

    pub fn zero_config(&self) -> JointConfig {
        JointConfig::zeros(self.dof)
    }

    pub fn mid_config(&self) -> JointConfig {
        JointConfig(self.joints().map(|j| 0.5 * (j.limits[0] + j.limits[1])).collect())
    }

    /// Clamps every angle into its joint limits. Idempotent.
    pub fn clamp_to_limits(&self, q: &JointConfig) -> JointConfig {
        JointConfig(
            q.0.iter()
                .zip(self.joints())
                .map(|(&v, j)| v.clamp(j.limits[0], j.limits[1]))
                .collect(),
        )
    }

    pub fn within_limits(&self, q: &JointConfig, tol: f64) -> bool {
        q.len() == self.dof
            && q.0
                .iter()
                .zip(self.joints())
                .all(|(&v, j)| v >= j.limits[0] - tol && v <= j.limits[1] + tol)
    }

    pub fn check_config(&self, q: &JointConfig) -> Result<()> {
        if q.len() != self.dof {
            return Err(Error::invalid(format!(
                "configuration has {} angles but model '{}' has {} joints",
                q.len(),
                self.name(),
                self.dof
            )));
        }
        if let Some(i) = q.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("angle {i} is not finite")));
        }
        Ok(())
    }
}

/// Identifies the model a file was produced with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub name: String,
    /// SHA-256 of the model's canonical JSON, hex encoded.
    pub hash: String,
}

impl ModelRef {
    pub fn of(model: &HandModel) -> Self {
        ModelRef {
            name: model.name().to_string(),
            hash: model.content_hash(),
        }
    }

    /// A human-readable warning when `model` differs from the referenced one.
    pub fn mismatch(&self, model: &HandModel, role: &str) -> Option<String> {
        let actual = ModelRef::of(model);
        (actual != *self).then(|| {
            format!(
                "{role} model '{}' ({}) differs from '{}' ({}) recorded in the file",
                actual.name,
                &actual.hash[..12.min(actual.hash.len())],
                self.name,
                &self.hash[..12.min(self.hash.len())]
            )
        })
    }
}

/// Joint angles (rad) for one hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn zeros(n: usize) -> Self {
        JointConfig(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn finger<'a>(&'a self, model: &HandModel, f: Finger) -> &'a [f64] {
        &self.0[model.finger_range(f)]
    }

    pub fn finger_mut<'a>(&'a mut self, model: &HandModel, f: Finger) -> &'a mut [f64] {
        &mut self.0[model.finger_range(f)]
    }

    pub fn max_abs_diff(&self, other: &JointConfig) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for JointConfig {
    fn from(v: Vec<f64>) -> Self {
        JointConfig(v)
    }
}
