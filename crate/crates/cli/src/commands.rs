use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use ghostline_core::calibration::{build_motion_pairs, fit_correction as fit, pair_residual, solve_handeye, PointPairSet};
use ghostline_core::camera::{CameraIntrinsics, CameraSide};
use ghostline_core::formats::{parse_pose_sequence, write_pose_sequence};
use ghostline_core::instrument::InstrumentModel;
use ghostline_core::pipeline::{
    parse_kinematics, parse_pose_track, playback_frames, render_overlay, track_pose_at, write_kinematics,
    write_overlay_stream, write_pose_track, CameraSetup, Recorder, SessionState, Trajectory,
};
use ghostline_core::registration::{parse_detections, register_scene, write_detections, FiducialMap, RegistrationConfig};
use ghostline_core::robust::RobustConfig;
use ghostline_core::simulator::{aggregate, generate_dataset, monte_carlo, run_scenario, NoiseSpec, ScenarioSpec};
use ghostline_core::Error;

use crate::io::{load, load_pose, write, write_pose};
use crate::{Ransac, ScenarioArgs};

fn robust(base: RobustConfig, threshold: f64, ransac: Ransac) -> RobustConfig {
    let mut cfg = base.with_threshold(threshold).with_seed(ransac.seed);
    cfg.max_iterations = ransac.ransac_iters;
    cfg
}

fn print_report(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        println!("{k} {v}");
    }
}

#[allow(clippy::too_many_arguments)]
pub fn register(
    detections: &Path,
    map: &Path,
    intrinsics: &Path,
    out: &Path,
    frames: usize,
    detect_thres: usize,
    inlier_px: f64,
    ransac: Ransac,
) -> Result<()> {
    let batches = load(detections, parse_detections)?;
    let map = load(map, FiducialMap::parse)?;
    let k = load(intrinsics, CameraIntrinsics::parse)?;
    let cfg = RegistrationConfig {
        n_frame_thres: frames,
        n_detect_thres: detect_thres,
        robust: robust(RobustConfig::pnp(), inlier_px, ransac),
    };
    let reg = register_scene(&batches, &map, &k, &cfg)?;
    write_pose(out, reg.pose())?;
    print_report(&[
        ("detections", reg.n_detect.to_string()),
        ("points", reg.n_points.to_string()),
        ("inliers", reg.solution.inlier_count().to_string()),
        ("rms_px", reg.solution.rms_residual.to_string()),
    ]);
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn calibrate_handeye(
    camera_poses: &Path,
    robot_poses: &Path,
    train: usize,
    out: &Path,
    inlier_mm: f64,
    inlier_deg: f64,
    ransac: Ransac,
) -> Result<()> {
    let cams = load(camera_poses, parse_pose_sequence)?;
    let robot = load(robot_poses, parse_pose_sequence)?;
    if cams.len() != robot.len() {
        return Err(anyhow!(Error::Validation(format!(
            "{} camera poses but {} robot poses",
            cams.len(),
            robot.len()
        ))));
    }
    let split = train.min(cams.len());
    let pairs = build_motion_pairs(&cams[..split], &robot[..split])?;
    let mut cfg = robust(RobustConfig::handeye(), inlier_mm, ransac);
    cfg.angle_threshold_deg = inlier_deg;
    let fit = solve_handeye(&pairs, &cfg)?;
    write_pose(out, &fit.transform.inverse())?;

    let (deg, mm): (Vec<f64>, Vec<f64>) = fit.residuals.iter().copied().unzip();
    let mut report = vec![
        ("train_pairs", pairs.len().to_string()),
        ("train_inliers", fit.inlier_count().to_string()),
        ("train_rot_deg.mean", mean(&deg).to_string()),
        ("train_trans_mm.mean", mean(&mm).to_string()),
    ];
    let test_stations = cams.len() - split;
    if test_stations >= 3 {
        let test = build_motion_pairs(&cams[split..], &robot[split..])?;
        let (deg, mm): (Vec<f64>, Vec<f64>) = test.iter().map(|p| pair_residual(p, &fit.transform)).unzip();
        report.push(("test_pairs", test.len().to_string()));
        report.push(("test_rot_deg.mean", mean(&deg).to_string()));
        report.push(("test_trans_mm.mean", mean(&mm).to_string()));
    } else {
        report.push(("test_pairs", "0".into()));
    }
    print_report(&report);
    Ok(())
}

pub fn fit_correction(pairs: &Path, out: &Path, inlier_mm: f64, ransac: Ransac) -> Result<()> {
    let pairs = load(pairs, PointPairSet::parse)?;
    let f = fit(&pairs, &robust(RobustConfig::correction(), inlier_mm, ransac))?;
    write_pose(out, &f.transform)?;
    print_report(&[
        ("pairs", pairs.len().to_string()),
        ("inliers", f.inliers.iter().filter(|&&b| b).count().to_string()),
        ("rms_mm", f.rms.to_string()),
    ]);
    Ok(())
}

pub struct RecordInputs {
    pub stream: PathBuf,
    pub registration: PathBuf,
    pub hand_eye: PathBuf,
    pub right: Option<(PathBuf, PathBuf)>,
    pub correction: Option<PathBuf>,
    pub instrument: Option<String>,
    pub initial_ecm: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn record(inp: RecordInputs) -> Result<()> {
    let stream = load(&inp.stream, parse_kinematics)?;
    let first = stream
        .first()
        .ok_or_else(|| anyhow!(Error::InsufficientData(format!("{} holds no samples", inp.stream.display()))))?;
    let initial_ecm = match &inp.initial_ecm {
        Some(p) => load_pose(p)?,
        None => first.ecm,
    };
    let left = CameraSetup {
        registration: load_pose(&inp.registration)?,
        hand_eye: load_pose(&inp.hand_eye)?,
    };
    let mut state = SessionState::new(initial_ecm, left);
    state.registered_at = first.t;
    if let Some((reg, he)) = &inp.right {
        state = state.with_camera(CameraSide::Right, CameraSetup { registration: load_pose(reg)?, hand_eye: load_pose(he)? });
    }
    if let Some(c) = &inp.correction {
        let id = inp.instrument.clone().unwrap_or_else(|| first.instrument.clone());
        state = state.with_correction(CameraSide::Left, &id, load_pose(c)?);
    }
    let mut recorder = Recorder::new(state);
    for s in &stream {
        recorder
            .record(&s.ecm, &s.psm, s.joints, s.t, &s.instrument)
            .with_context(|| format!("sample at t = {} s", s.t))?;
    }
    let traj = recorder.finish()?;
    write(&inp.out, &traj.to_text())?;
    print_report(&[
        ("samples", traj.samples().len().to_string()),
        ("duration_s", (traj.end() - traj.start()).to_string()),
    ]);
    Ok(())
}

pub struct PlaybackInputs {
    pub trajectory: PathBuf,
    pub registration: PathBuf,
    pub hand_eye: PathBuf,
    pub intrinsics: PathBuf,
    pub ecm: PathBuf,
    pub camera: CameraSide,
    pub model: Option<PathBuf>,
    pub speed: f64,
    pub fps: f64,
    pub out: PathBuf,
}

fn load_model(path: Option<&Path>) -> Result<InstrumentModel> {
    let Some(path) = path else {
        return Ok(InstrumentModel::default());
    };
    let mut m = load(path, InstrumentModel::parse)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    m.load_meshes(dir).with_context(|| format!("loading meshes for {}", path.display()))?;
    Ok(m)
}

pub fn playback(inp: PlaybackInputs) -> Result<()> {
    let traj = load(&inp.trajectory, Trajectory::parse)?;
    let k = load(&inp.intrinsics, CameraIntrinsics::parse)?;
    let track = load(&inp.ecm, parse_pose_track)?;
    let model = load_model(inp.model.as_deref())?;
    let (t0, initial_ecm) = *track
        .first()
        .ok_or_else(|| anyhow!(Error::InsufficientData(format!("{} holds no poses", inp.ecm.display()))))?;
    let setup = CameraSetup {
        registration: load_pose(&inp.registration)?,
        hand_eye: load_pose(&inp.hand_eye)?,
    };
    let state = SessionState {
        initial_ecm,
        cameras: BTreeMap::from([(inp.camera, setup)]),
        corrections: BTreeMap::new(),
        registered_at: t0,
    };

    let mut frames = Vec::new();
    for (clock, sample) in playback_frames(&traj, inp.speed, inp.fps)? {
        let ecm = track_pose_at(&track, t0 + clock)?;
        let overlay = render_overlay(&sample, &state, &ecm, &model, &k, inp.camera)?;
        frames.push((clock, sample.t, overlay));
    }
    let duration = traj.playback_duration(inp.speed)?;
    let meta = BTreeMap::from([
        ("camera".to_string(), inp.camera.name().to_string()),
        ("duration_s".to_string(), duration.to_string()),
        ("fps".to_string(), inp.fps.to_string()),
        ("frames".to_string(), frames.len().to_string()),
        ("speed".to_string(), inp.speed.to_string()),
    ]);
    write(&inp.out, &write_overlay_stream(&meta, &frames))?;
    print_report(&[("frames", frames.len().to_string()), ("duration_s", duration.to_string())]);
    Ok(())
}

/// Scenario file (or defaults), then preset, seed and flag overrides.
pub fn scenario_spec(args: &ScenarioArgs) -> Result<ScenarioSpec> {
    let mut spec = match &args.scenario {
        Some(p) => load(p, ScenarioSpec::parse)?,
        None => ScenarioSpec::default(),
    };
    if let Some(p) = &args.preset {
        spec.noise = NoiseSpec::preset(p, spec.seed)?;
        spec.preset = p.clone();
    }
    if let Some(s) = args.seed {
        spec = spec.reseeded(s);
    }
    if let Some(v) = args.frames {
        spec.frames = v;
    }
    if let Some(v) = args.detect_thres {
        spec.detect_thres = v;
    }
    if let Some(v) = args.ransac_iters {
        spec.ransac_iters = v;
    }
    if let Some(v) = args.inlier_px {
        spec.inlier_px = v;
    }
    if let Some(v) = args.samples {
        spec.samples = v;
    }
    spec.validate()?;
    Ok(spec)
}

/// Header, spec echo, run counts and the across-run statistics of every metric.
fn characterization(spec: &ScenarioSpec, runs: usize) -> Result<String> {
    let mut ok = Vec::new();
    let mut failures: BTreeMap<String, usize> = BTreeMap::new();
    let mut first_error = None;
    for r in monte_carlo(spec, runs) {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                *failures.entry(e.to_string()).or_default() += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(anyhow!(first_error.expect("runs > 0")).context("every run failed"));
    }
    let mut out = String::from("#ghostline-characterization v1\n");
    for line in spec.to_text().lines() {
        let _ = writeln!(out, "config.{line}");
    }
    let _ = writeln!(out, "runs {runs}");
    let _ = writeln!(out, "runs.ok {}", ok.len());
    for (msg, n) in &failures {
        let _ = writeln!(out, "#failed {n} {msg}");
    }
    for (k, v) in aggregate(&ok) {
        let _ = writeln!(out, "{k} {v}");
    }
    Ok(out)
}

pub fn evaluate(args: &ScenarioArgs, runs: usize, out: Option<&Path>) -> Result<()> {
    let spec = scenario_spec(args)?;
    let text = if runs == 1 {
        run_scenario(&spec)?.to_text()
    } else {
        characterization(&spec, runs)?
    };
    match out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn generate(args: &ScenarioArgs, dir: &Path) -> Result<()> {
    let spec = scenario_spec(args)?;
    let d = generate_dataset(&spec)?;
    let w = &d.world;
    let files: Vec<(String, String)> = {
        let mut f = vec![
            ("scenario.txt".into(), spec.to_text()),
            ("map.txt".into(), w.fiducials.to_text()),
            ("instrument.txt".into(), w.model.to_text()),
            ("handeye_camera.txt".into(), write_pose_sequence(&d.handeye_camera)),
            ("handeye_robot.txt".into(), write_pose_sequence(&d.handeye_robot)),
            ("correction_pairs.txt".into(), d.correction_pairs.to_text()),
            ("stream.txt".into(), write_kinematics(&d.stream)),
            ("playback_ecm.txt".into(), write_pose_track(&d.playback_ecm)),
        ];
        for (side, k) in &d.intrinsics {
            let name = side.name();
            f.push((format!("intrinsics_{name}.txt"), k.to_text()));
            f.push((format!("detections_{name}.txt"), write_detections(&d.detections[side])));
            f.push((format!("playback_detections_{name}.txt"), write_detections(&d.playback_detections[side])));
            f.push((format!("truth/hand_eye_{name}.txt"), write_pose_sequence(&[w.camera(*side)?.hand_eye])));
            for (i, tag) in [(0, "registration"), (1, "playback_registration")] {
                let s = w.session(i)?;
                let reg = w.registration(s, *side, &s.initial_ecm())?;
                f.push((format!("truth/{tag}_{name}.txt"), write_pose_sequence(&[reg])));
            }
        }
        if let Some(c) = w.corrections.get(&w.instrument) {
            f.push(("truth/correction.txt".into(), write_pose_sequence(&[*c])));
        }
        f
    };
    for (name, text) in &files {
        write(&dir.join(name), text)?;
    }
    println!("files {}", files.len());
    Ok(())
}
