//! Frames exchanged with the streaming service. Every frame is one JSON
//! object in a text message, tagged by `kind`.

use std::collections::VecDeque;

use respilot_core::hand::{chain_points, Finger, HandModel, JointConfig};
use respilot_core::retarget::{ResultStatus, RetargetResult, RetargeterKind, StageTimings};
use respilot_core::Result;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello(ClientHello),
    State(StateFrame),
    ToggleConstraint(ToggleFrame),
    SetRetargeter(SetRetargeterFrame),
    SetParams(ParamUpdate),
    Health,
}

/// Opening frame. Every field except the version is an optional expectation
/// the server checks against what it serves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientHello {
    pub protocol_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_dof: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_dof: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_model_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_model_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle_hash: Option<String>,
    /// Retargeter to start with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retargeter: Option<RetargeterKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFrame {
    /// Client tick id; must increase within a session.
    pub tick: u64,
    /// Human joint angles, rad.
    pub q_h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToggleFrame {
    pub finger: Finger,
    pub on: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetRetargeterFrame {
    pub retargeter: RetargeterKind,
}

/// Session parameters to change; absent fields keep their value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(ServerHello),
    Result(Box<TickResult>),
    Error(ErrorReply),
    Health(HealthReport),
}

impl ServerMessage {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("server frames serialize")
    }

    pub fn error(code: ErrorCode, message: impl Into<String>, tick: Option<u64>) -> Self {
        ServerMessage::Error(ErrorReply {
            code,
            message: message.into(),
            tick,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub hash: String,
    pub dof: usize,
    /// Joints per finger: thumb, index, middle, ring.
    pub finger_dof: [usize; 4],
    pub joint_names: Vec<String>,
    pub limits: Vec<[f64; 2]>,
}

impl ModelInfo {
    pub fn of(model: &HandModel) -> Self {
        ModelInfo {
            name: model.name().to_string(),
            hash: model.content_hash(),
            dof: model.dof(),
            finger_dof: Finger::ALL.map(|f| model.finger_dof(f)),
            joint_names: model.joints().map(|j| j.name.clone()).collect(),
            limits: model.limits(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerHello {
    pub protocol_version: u32,
    pub session_id: u64,
    pub human: ModelInfo,
    pub robot: ModelInfo,
    pub bundle_hash: Option<String>,
    /// Retargeters this server can run.
    pub retargeters: Vec<RetargeterKind>,
    pub retargeter: RetargeterKind,
    /// Default thumb-to-fingertip constraint distance, m.
    pub constraint_distance: f64,
}

/// Robot keypoints in the palm frame (m) for drawing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderKeypoints {
    pub palm: [f64; 3],
    /// Thumb, index, middle, ring.
    pub tips: [[f64; 3]; 4],
    /// Per finger: joint origins, end of the last link, fingertip.
    pub chains: [Vec<[f64; 3]>; 4],
}

impl RenderKeypoints {
    pub fn of(model: &HandModel, q: &JointConfig) -> Result<Self> {
        let chains = chain_points(model, q)?.map(|pts| pts.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>());
        let tips = [0, 1, 2, 3].map(|i| *chains[i].last().expect("chains end at the tip"));
        Ok(RenderKeypoints {
            palm: [0.0; 3],
            tips,
            chains,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickResult {
    /// Echo of the state frame's tick.
    pub tick: u64,
    pub retargeter: RetargeterKind,
    pub constrained: Vec<Finger>,
    pub q_d: JointConfig,
    pub q_c: JointConfig,
    pub q_target: JointConfig,
    /// Keypoints of `q_c`.
    pub keypoints: RenderKeypoints,
    pub timings: StageTimings,
    pub status: ResultStatus,
}

impl TickResult {
    pub fn new(
        tick: u64,
        retargeter: RetargeterKind,
        constrained: Vec<Finger>,
        robot: &HandModel,
        r: RetargetResult,
    ) -> Result<Self> {
        Ok(TickResult {
            tick,
            retargeter,
            constrained,
            keypoints: RenderKeypoints::of(robot, &r.q_c)?,
            q_d: r.q_d,
            q_c: r.q_c,
            q_target: r.q_target,
            timings: r.timings,
            status: r.status,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Handshake failure or protocol violation; the server closes the connection.
    Protocol,
    /// Frame is not a valid client message.
    Malformed,
    /// State frame with the wrong number of angles or non-finite values.
    InvalidState,
    /// State frame whose tick does not exceed the previous one.
    StaleTick,
    /// A newer state arrived before this one was started.
    Superseded,
    /// Toggle or parameter change that cannot be applied.
    InvalidRequest,
    /// The pipeline failed on this state.
    Solver,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tick: Option<u64>,
}

/// Mean stage timings over the most recent ticks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub ticks: u64,
    /// Number of ticks the means cover.
    pub window: usize,
    pub mean: StageTimings,
    pub max_total: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RollingLatency {
    ticks: u64,
    recent: VecDeque<StageTimings>,
}

impl RollingLatency {
    pub const WINDOW: usize = 100;

    pub fn record(&mut self, t: &StageTimings) {
        self.ticks += 1;
        if self.recent.len() == Self::WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(t.clone());
    }

    pub fn stats(&self) -> LatencyStats {
        let n = self.recent.len();
        let mut mean = StageTimings::default();
        let mut max_total: f64 = 0.0;
        for t in &self.recent {
            mean.base += t.base;
            mean.gp += t.gp;
            mean.reconstruct += t.reconstruct;
            mean.constraints += t.constraints;
            mean.smoothing += t.smoothing;
            mean.total += t.total;
            max_total = max_total.max(t.total);
        }
        if n > 0 {
            let k = n as f64;
            mean.base /= k;
            mean.gp /= k;
            mean.reconstruct /= k;
            mean.constraints /= k;
            mean.smoothing /= k;
            mean.total /= k;
        }
        LatencyStats {
            ticks: self.ticks,
            window: n,
            mean,
            max_total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionHealth {
    pub session_id: u64,
    pub retargeter: RetargeterKind,
    pub constrained: Vec<Finger>,
    pub superseded: u64,
    pub latency: LatencyStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub status: String,
    pub protocol_version: u32,
    pub uptime_s: f64,
    pub human_model: String,
    pub human_model_hash: String,
    pub robot_model: String,
    pub robot_model_hash: String,
    pub bundle_hash: Option<String>,
    pub sessions_active: usize,
    pub sessions_total: u64,
    /// Across all sessions.
    pub latency: LatencyStats,
    pub sessions: Vec<SessionHealth>,
}
