use std::io::Write;
use std::path::{Path, PathBuf};

use respilot_core::calibration::{
    calibrate, generate_synthetic_calibration, synthetic_sweep_trajectory, CalibrationConfig, CalibrationDataset,
    GpBundle, GroundTruthWarp,
};
use respilot_core::hand::{Finger, HandModel, JointConfig, ModelRef};
use respilot_core::hkvm::HkvmParams;
use respilot_core::retarget::{
    trajectory_ranges, ResultStatus, RetargetModels, RetargetSession, RetargeterKind, SessionConfig, StageTimings,
};
use respilot_core::trajectory::Trajectory;
use respilot_core::workspace::compare_retargeters;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{
    CalibrateArgs, Cli, Command, HkvmArgs, ModelArgs, OutputFormat, RetargetArgs, ServeArgs, SynthArgs, WarpArg,
    WorkspaceArgs,
};
use crate::error::{CliError, CliResult};
use crate::service::{serve, AppState};

pub const CALIBRATION_FILE: &str = "calibration.json";
pub const SWEEP_FILE: &str = "sweep_trajectory.json";
pub const RETARGET_SCHEMA_VERSION: u32 = 1;

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Calibrate(a) => cmd_calibrate(&a, out),
        Command::Retarget(a) => cmd_retarget(&a, out),
        Command::Workspace(a) => cmd_workspace(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Serve(a) => cmd_serve(&a, out),
    }
}

fn io_err(what: &str, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{what}: {e}"))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{what} '{}' does not exist or is not a file", path.display())))
    }
}

/// The parent directory of an output file must already exist.
fn require_out_dir(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::validation(format!(
            "output directory '{}' does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

pub fn load_models(args: &ModelArgs) -> CliResult<(HandModel, HandModel)> {
    let load = |path: &Option<PathBuf>, what: &str, bundled: fn() -> HandModel| -> CliResult<HandModel> {
        match path {
            Some(p) => {
                require_file(p, what)?;
                Ok(HandModel::load(p)?)
            }
            None => Ok(bundled()),
        }
    };
    Ok((
        load(&args.human_model, "human model", HandModel::bundled_human)?,
        load(&args.robot_model, "robot model", HandModel::bundled_robot)?,
    ))
}

fn load_bundle(path: &Option<PathBuf>) -> CliResult<Option<GpBundle>> {
    match path {
        Some(p) => {
            require_file(p, "bundle")?;
            Ok(Some(GpBundle::load(p)?))
        }
        None => Ok(None),
    }
}

fn hkvm_params(base: &HkvmParams, args: &HkvmArgs) -> CliResult<HkvmParams> {
    let mut p = base.clone();
    if let Some(b) = args.beta {
        p.beta = b;
    }
    if let Some(g) = args.gamma {
        p.gamma = g;
    }
    p.validate()?;
    Ok(p)
}

fn file_hash(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(&format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|e| io_err("writing output", e))
}

pub fn cmd_calibrate(args: &CalibrateArgs, out: &mut dyn Write) -> CliResult<()> {
    let (human, robot) = load_models(&args.models)?;
    require_out_dir(&args.out)?;
    let mut config = CalibrationConfig {
        hkvm: hkvm_params(&HkvmParams::default(), &args.hkvm)?,
        direct: args.direct,
        ..Default::default()
    };
    config.train.seed = args.seed;
    if let Some(lr) = args.lr {
        config.train.lr = lr;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    config.train.validate()?;
    let dataset = match &args.dataset {
        Some(p) => {
            require_file(p, "dataset")?;
            CalibrationDataset::load(p)?
        }
        None => generate_synthetic_calibration(
            args.seed,
            &GroundTruthWarp::expansion(),
            &human,
            &robot,
            &config.hkvm,
            &config.keypoints,
        )?,
    };
    let (bundle, report) = calibrate(&dataset, &human, &robot, &config)?;
    bundle.save(&args.out)?;
    let hash = file_hash(&args.out)?;
    let fingers: Vec<_> = report
        .residual
        .iter()
        .map(|r| {
            serde_json::json!({
                "finger": r.finger,
                "epochs": r.epochs,
                "initial_loss": r.initial_loss,
                "final_loss": r.final_loss,
            })
        })
        .collect();
    let text = match args.format {
        OutputFormat::Json => {
            serde_json::json!({
                "bundle": args.out,
                "sha256": hash,
                "samples": dataset.len(),
                "wall_time_s": report.wall_time,
                "fingers": fingers,
                "warnings": report.warnings,
            })
            .to_string()
                + "\n"
        }
        OutputFormat::Table => {
            let mut s = format!("{:<8} {:>8} {:>14} {:>14}\n", "finger", "epochs", "initial -mll", "final -mll");
            for r in &report.residual {
                s += &format!("{:<8} {:>8} {:>14.4} {:>14.4}\n", r.finger, r.epochs, r.initial_loss, r.final_loss);
            }
            s += &format!("trained on {} samples in {:.2} s\n", dataset.len(), report.wall_time);
            s += &format!("bundle written to {} (sha256 {hash})\n", args.out.display());
            s
        }
    };
    emit(out, &text)
}

/// One retargeted tick as written by `retarget`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub q_d: JointConfig,
    pub q_c: JointConfig,
    pub q_target: JointConfig,
    pub status: ResultStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetargetOutput {
    pub schema_version: u32,
    pub retargeter: RetargeterKind,
    pub human_model: ModelRef,
    pub robot_model: ModelRef,
    pub bundle_hash: Option<String>,
    pub constrained: Vec<Finger>,
    pub config: SessionConfig,
    pub ticks: Vec<TickRecord>,
}

pub fn cmd_retarget(args: &RetargetArgs, out: &mut dyn Write) -> CliResult<()> {
    let (human, robot) = load_models(&args.models)?;
    require_file(&args.trajectory, "trajectory")?;
    require_out_dir(&args.out)?;
    let traj = Trajectory::load(&args.trajectory)?;
    let bundle = load_bundle(&args.bundle)?;
    if args.retargeter.needs_bundle() && bundle.is_none() {
        return Err(CliError::validation(format!("retargeter {} needs --bundle", args.retargeter)));
    }
    let bundle_hash = bundle.as_ref().map(GpBundle::content_hash);
    let (models, warnings) = RetargetModels::new(human, robot, bundle)?;
    for w in warnings {
        log::warn!("{w}");
    }
    if let Some(w) = traj.check_model(&models.human)? {
        log::warn!("{w}");
    }
    let mut config = SessionConfig::for_kind(args.retargeter, models.bundle.as_ref());
    config.hkvm = hkvm_params(&config.hkvm, &args.hkvm)?;
    if let Some(s) = args.smoothing {
        config.smoothing = s;
    }
    if let Some(d) = args.constraint_distance {
        config.constraint_distance = d;
    }
    if args.retargeter == RetargeterKind::Joint {
        config.joint_ranges = Some(trajectory_ranges(&traj));
    }
    let mut session = RetargetSession::new(models.clone(), config)?;
    for &f in &args.constrain {
        session.set_constraint(f, true)?;
    }
    let mut ticks = Vec::with_capacity(traj.len());
    let mut worst_total: f64 = 0.0;
    let mut sum_total = 0.0;
    let mut unsatisfied = 0usize;
    for (i, q_h) in traj.configs.iter().enumerate() {
        let r = session.step(q_h)?;
        worst_total = worst_total.max(r.timings.total);
        sum_total += r.timings.total;
        if r.status.constraints.iter().any(|c| !c.satisfied) {
            unsatisfied += 1;
        }
        ticks.push(TickRecord {
            tick: i,
            q_d: r.q_d,
            q_c: r.q_c,
            q_target: r.q_target,
            status: r.status,
            timings: args.timings.then_some(r.timings),
        });
    }
    let n = ticks.len();
    let record = RetargetOutput {
        schema_version: RETARGET_SCHEMA_VERSION,
        retargeter: args.retargeter,
        human_model: ModelRef::of(&models.human),
        robot_model: ModelRef::of(&models.robot),
        bundle_hash,
        constrained: session.constrained(),
        config: session.config().clone(),
        ticks,
    };
    let json = serde_json::to_string_pretty(&record).expect("output serializes") + "\n";
    std::fs::write(&args.out, json).map_err(|e| io_err(&format!("writing {}", args.out.display()), e))?;
    let mean = sum_total / n as f64;
    let text = match args.format {
        OutputFormat::Json => {
            serde_json::json!({
                "out": args.out,
                "retargeter": args.retargeter,
                "ticks": n,
                "mean_tick_s": mean,
                "max_tick_s": worst_total,
                "ticks_with_unsatisfied_constraints": unsatisfied,
            })
            .to_string()
                + "\n"
        }
        OutputFormat::Table => format!(
            "{} ticks with {}: mean {:.2} ms, max {:.2} ms per tick; {} ticks with unsatisfied constraints\nwritten to {}\n",
            n,
            args.retargeter.label(),
            mean * 1e3,
            worst_total * 1e3,
            unsatisfied,
            args.out.display()
        ),
    };
    emit(out, &text)
}

pub fn cmd_workspace(args: &WorkspaceArgs, out: &mut dyn Write) -> CliResult<()> {
    let (human, robot) = load_models(&args.models)?;
    if let Some(p) = &args.out {
        require_out_dir(p)?;
    }
    let traj = match &args.trajectory {
        Some(p) => {
            require_file(p, "trajectory")?;
            Trajectory::load(p)?
        }
        None => synthetic_sweep_trajectory(&human, args.seed)?,
    };
    let bundle = load_bundle(&args.bundle)?;
    let kinds: Vec<RetargeterKind> = if args.retargeter.is_empty() {
        RetargeterKind::ALL
            .into_iter()
            .filter(|k| match (&bundle, k) {
                (None, k) => !k.needs_bundle(),
                (Some(b), RetargeterKind::GpDirect) => b.direct.is_some(),
                _ => true,
            })
            .collect()
    } else {
        args.retargeter.clone()
    };
    if let Some(k) = kinds.iter().find(|k| k.needs_bundle()) {
        if bundle.is_none() {
            return Err(CliError::validation(format!("retargeter {k} needs --bundle")));
        }
    }
    let (models, warnings) = RetargetModels::new(human, robot, bundle)?;
    for w in warnings {
        log::warn!("{w}");
    }
    let report = compare_retargeters(&models, &traj, &kinds, args.delta_joint, args.delta_tip)?;
    let text = match args.format {
        OutputFormat::Json => report.to_json() + "\n",
        OutputFormat::Table => report.to_table(),
    };
    if let Some(p) = &args.out {
        std::fs::write(p, &text).map_err(|e| io_err(&format!("writing {}", p.display()), e))?;
    }
    emit(out, &text)
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let (human, robot) = load_models(&args.models)?;
    let warp = match (args.warp, args.gain) {
        (WarpArg::Expansion, Some(gain)) => GroundTruthWarp::Expansion { gain },
        (WarpArg::Expansion, None) => GroundTruthWarp::expansion(),
        (_, Some(_)) => return Err(CliError::validation("--gain applies to the expansion warp only")),
        (WarpArg::Hkvm, None) => GroundTruthWarp::Hkvm,
        (WarpArg::Identity, None) => GroundTruthWarp::Identity,
    };
    let params = HkvmParams::default();
    let dataset =
        generate_synthetic_calibration(args.seed, &warp, &human, &robot, &params, &Default::default())?;
    let traj = synthetic_sweep_trajectory(&human, args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&format!("creating {}", args.out.display()), e))?;
    let calib_path = args.out.join(CALIBRATION_FILE);
    let sweep_path = args.out.join(SWEEP_FILE);
    dataset.save(&calib_path)?;
    traj.save(&sweep_path)?;
    let mut text = String::new();
    for (path, what) in [(&calib_path, format!("{} samples", dataset.len())), (&sweep_path, format!("{} configurations", traj.len()))] {
        text += &format!("{}  {}  ({what})\n", file_hash(path)?, path.display());
    }
    emit(out, &text)
}

pub fn cmd_serve(args: &ServeArgs, out: &mut dyn Write) -> CliResult<()> {
    let (human, robot) = load_models(&args.models)?;
    let bundle = load_bundle(&args.bundle)?;
    let (models, warnings) = RetargetModels::new(human, robot, bundle)?;
    for w in warnings {
        log::warn!("{w}");
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| io_err("starting the runtime", e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.bind)
            .await
            .map_err(|e| io_err(&format!("binding {}", args.bind), e))?;
        let addr = listener.local_addr().map_err(|e| io_err("reading the bound address", e))?;
        emit(out, &format!("listening on ws://{addr}/ws (health at http://{addr}/health)\n"))?;
        out.flush().map_err(|e| io_err("writing output", e))?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, AppState::new(models), shutdown)
            .await
            .map_err(|e| io_err("serving", e))
    })
}
