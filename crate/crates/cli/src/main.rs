//! `ghostline`: file-based front end to registration, calibration, record,
//! playback and synthetic evaluation.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ghostline_core::Error;

#[derive(Parser)]
#[command(name = "ghostline", version, about = "Record and replay instrument motion across robot setups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
pub struct Ransac {
    /// RANSAC seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// RANSAC iteration cap
    #[arg(long, default_value_t = 1000, value_parser = positive_usize)]
    pub ransac_iters: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Register the scene from fiducial detections.
    Register {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// Output pose file (camera-from-scene).
        #[arg(long)]
        out: PathBuf,
        /// Frames pooled before solving.
        #[arg(long, default_value_t = 10, value_parser = positive_usize)]
        frames: usize,
        /// Marker detections required.
        #[arg(long, default_value_t = 10, value_parser = positive_usize)]
        detect_thres: usize,
        /// Reprojection inlier threshold, px.
        #[arg(long, default_value_t = 2.0, value_parser = positive_f64)]
        inlier_px: f64,
        #[command(flatten)]
        ransac: Ransac,
    },
    /// Solve the camera hand-eye transform from station pose sequences.
    CalibrateHandeye {
        /// Camera-from-scene registration per station.
        #[arg(long)]
        camera_poses: PathBuf,
        /// ECM base-to-tip pose per station.
        #[arg(long)]
        robot_poses: PathBuf,
        /// Stations used for calibration; the rest are held out for testing.
        #[arg(long, default_value_t = 31, value_parser = positive_usize)]
        train: usize,
        /// Output pose file (ECM-from-camera).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2.0, value_parser = positive_f64)]
        inlier_mm: f64,
        #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
        inlier_deg: f64,
        #[command(flatten)]
        ransac: Ransac,
    },
    /// Fit the API correction transform from corresponding tool-tip points.
    FitCorrection {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
        inlier_mm: f64,
        #[command(flatten)]
        ransac: Ransac,
    },
    /// Convert a kinematics stream into a scene-frame trajectory.
    Record {
        /// Kinematics stream (t, ECM pose, reported PSM pose, joints, id).
        #[arg(long)]
        stream: PathBuf,
        /// Left-camera registration at the initial ECM pose.
        #[arg(long)]
        registration: PathBuf,
        /// Left-camera hand-eye.
        #[arg(long)]
        hand_eye: PathBuf,
        #[arg(long, requires = "right_hand_eye")]
        right_registration: Option<PathBuf>,
        #[arg(long, requires = "right_registration")]
        right_hand_eye: Option<PathBuf>,
        /// API correction; identity when absent.
        #[arg(long)]
        correction: Option<PathBuf>,
        /// Instrument the correction belongs to (default: the stream's first id).
        #[arg(long)]
        instrument: Option<String>,
        /// ECM pose at registration (default: the stream's first ECM pose).
        #[arg(long)]
        initial_ecm: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trajectory as an overlay stream in a (possibly new) setup.
    Playback {
        #[arg(long)]
        trajectory: PathBuf,
        /// Registration of the playback camera at the first ECM pose of `--ecm`.
        #[arg(long)]
        registration: PathBuf,
        #[arg(long)]
        hand_eye: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// ECM poses over playback wall-clock time; the first is the registration pose.
        #[arg(long)]
        ecm: PathBuf,
        #[arg(long, default_value = "left")]
        camera: ghostline_core::camera::CameraSide,
        /// Instrument model configuration (default: large needle driver proxy).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
        speed: f64,
        #[arg(long, default_value_t = 30.0, value_parser = positive_f64)]
        fps: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the synthetic end-to-end evaluation.
    Evaluate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Seeds evaluated, starting at the scenario seed.
        #[arg(long, default_value_t = 1, value_parser = positive_usize)]
        runs: usize,
        /// Report file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset for the other subcommands.
    Generate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Scenario selection shared by `evaluate` and `generate`. Flags override
/// values read from `--scenario`.
#[derive(Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise preset: `zero` or `paper-comparable`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_parser = positive_usize)]
    pub frames: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    pub detect_thres: Option<usize>,
    #[arg(long, value_parser = positive_usize)]
    pub ransac_iters: Option<usize>,
    #[arg(long, value_parser = positive_f64)]
    pub inlier_px: Option<f64>,
    #[arg(long, value_parser = positive_usize)]
    pub samples: Option<usize>,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("expected a positive integer, got `{s}`")),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

/// Exit status per failure class.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Parse { .. }) => 2,
        Some(Error::InsufficientDetections { .. } | Error::InsufficientData(_)) => 3,
        Some(Error::Degenerate(_) | Error::BehindCamera(_)) => 4,
        Some(Error::UnobservableTranslation(_)) => 5,
        Some(Error::NoConsensus { .. }) => 6,
        Some(Error::Validation(_)) => 7,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Register { detections, map, intrinsics, out, frames, detect_thres, inlier_px, ransac } => {
            commands::register(&detections, &map, &intrinsics, &out, frames, detect_thres, inlier_px, ransac)
        }
        Command::CalibrateHandeye { camera_poses, robot_poses, train, out, inlier_mm, inlier_deg, ransac } => {
            commands::calibrate_handeye(&camera_poses, &robot_poses, train, &out, inlier_mm, inlier_deg, ransac)
        }
        Command::FitCorrection { pairs, out, inlier_mm, ransac } => commands::fit_correction(&pairs, &out, inlier_mm, ransac),
        Command::Record {
            stream,
            registration,
            hand_eye,
            right_registration,
            right_hand_eye,
            correction,
            instrument,
            initial_ecm,
            out,
        } => commands::record(commands::RecordInputs {
            stream,
            registration,
            hand_eye,
            right: right_registration.zip(right_hand_eye),
            correction,
            instrument,
            initial_ecm,
            out,
        }),
        Command::Playback { trajectory, registration, hand_eye, intrinsics, ecm, camera, model, speed, fps, out } => {
            commands::playback(commands::PlaybackInputs {
                trajectory,
                registration,
                hand_eye,
                intrinsics,
                ecm,
                camera,
                model,
                speed,
                fps,
                out,
            })
        }
        Command::Evaluate { scenario, runs, out } => commands::evaluate(&scenario, runs, out.as_deref()),
        Command::Generate { scenario, out_dir } => commands::generate(&scenario, &out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
