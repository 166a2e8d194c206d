use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use respilot_core::hand::Finger;
use respilot_core::retarget::RetargeterKind;

#[derive(Debug, Parser)]
#[command(name = "respilot", version, about = "Hand retargeting with a residual GP on top of keypoint-vector matching")]
pub struct Cli {
    /// Log filter (error, warn, info, debug, trace); overrides RESPILOT_LOG.
    #[arg(long, global = true)]
    pub log_level: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the per-finger residual GPs and write a model bundle.
    Calibrate(CalibrateArgs),
    /// Run a retargeter over a human trajectory file.
    Retarget(RetargetArgs),
    /// Compare reachable joint and fingertip workspaces of retargeters.
    Workspace(WorkspaceArgs),
    /// Write the synthetic calibration set and sweep trajectory.
    Synth(SynthArgs),
    /// Serve live retargeting sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Table,
    Json,
}

/// Hand models; the bundled ones when not given.
#[derive(Clone, Debug, Default, Args)]
pub struct ModelArgs {
    #[arg(long, value_name = "PATH")]
    pub human_model: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub robot_model: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct HkvmArgs {
    /// Human-to-robot keypoint vector scale.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Weight of the joint-angle regularizer.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    /// Calibration dataset; the synthetic set for --seed when omitted.
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Where to write the bundle.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[command(flatten)]
    pub hkvm: HkvmArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also train the direct GP baseline.
    #[arg(long)]
    pub direct: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct RetargetArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    /// Human trajectory to retarget.
    #[arg(long, value_name = "PATH")]
    pub trajectory: PathBuf,
    /// Trained bundle; required by gp_direct and res_gp.
    #[arg(long, value_name = "PATH")]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value = "hkvm")]
    pub retargeter: RetargeterKind,
    /// Hold the thumb at the constraint distance from this finger. Repeatable.
    #[arg(long, value_name = "FINGER")]
    pub constrain: Vec<Finger>,
    /// Thumb-to-fingertip distance for constraints, m.
    #[arg(long)]
    pub constraint_distance: Option<f64>,
    /// Weight of the newest command in the smoothing filter, (0, 1].
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[command(flatten)]
    pub hkvm: HkvmArgs,
    /// Include per-stage timings in the output.
    #[arg(long)]
    pub timings: bool,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct WorkspaceArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    /// Human trajectory; the synthetic sweep for --seed when omitted.
    #[arg(long, value_name = "PATH")]
    pub trajectory: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub bundle: Option<PathBuf>,
    /// Retargeters to compare, comma separated; every one the bundle allows
    /// when omitted.
    #[arg(long, value_delimiter = ',')]
    pub retargeter: Vec<RetargeterKind>,
    /// Joint-space cell side, rad.
    #[arg(long, default_value_t = respilot_core::workspace::DEFAULT_DELTA_JOINT)]
    pub delta_joint: f64,
    /// Fingertip cell side, m.
    #[arg(long, default_value_t = respilot_core::workspace::DEFAULT_DELTA_TIP)]
    pub delta_tip: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the report here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum WarpArg {
    #[default]
    Expansion,
    Hkvm,
    Identity,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for calibration.json and sweep_trajectory.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// How robot labels are derived from the human poses.
    #[arg(long, value_enum, default_value_t)]
    pub warp: WarpArg,
    /// Gain of the expansion warp.
    #[arg(long)]
    pub gain: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, value_name = "PATH")]
    pub bundle: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub bind: SocketAddr,
}
