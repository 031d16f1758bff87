//! End-to-end synthetic runs: register, calibrate, record in one setup and
//! replay in another, measuring every stage against ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::Rng;

use super::*;
use crate::calibration::{build_motion_pairs, fit_correction, pair_residual, solve_handeye, PointPairSet};
use crate::camera::{to_ndc, CameraIntrinsics, CameraSide};
use crate::formats::{parse_f64, parse_floats, parse_pose, pose_string, records, write_floats};
use crate::instrument::{place_components, Component, InstrumentModel, JointState};
use crate::pipeline::{view_to_scene, CameraSetup, Recorder, SessionState, Trajectory};
use crate::registration::{register_scene, Corners3, FiducialMap, RegistrationConfig};
use crate::robust::RobustConfig;

pub(super) const SIDES: [CameraSide; 2] = [CameraSide::Left, CameraSide::Right];

/// Which optional stages run. Disabled calibration stages fall back to the
/// true transform so later stages stay meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub handeye: bool,
    pub correction: bool,
    pub relative_registration: bool,
    pub playback: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            handeye: true,
            correction: true,
            relative_registration: true,
            playback: true,
        }
    }
}

impl Stages {
    const NAMES: [&'static str; 4] = ["handeye", "correction", "relative_registration", "playback"];

    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        match name {
            "handeye" => Some(&mut self.handeye),
            "correction" => Some(&mut self.correction),
            "relative_registration" => Some(&mut self.relative_registration),
            "playback" => Some(&mut self.playback),
            _ => None,
        }
    }

    fn get(&self, name: &str) -> bool {
        let mut copy = *self;
        copy.slot(name).is_some_and(|b| *b)
    }
}

/// Everything a synthetic run depends on. One seed drives the world and
/// every noise stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub preset: String,
    pub noise: NoiseSpec,
    /// Frames pooled per registration.
    pub frames: usize,
    pub detect_thres: usize,
    pub ransac_iters: usize,
    pub inlier_px: f64,
    /// Recorded samples, evenly spaced over `duration`.
    pub samples: usize,
    /// s
    pub duration: f64,
    /// Hand-eye calibration stations; `n` stations give `n - 1` motions.
    pub handeye_train: usize,
    pub handeye_test: usize,
    pub correction_points: usize,
    pub correction_test: usize,
    /// Scene poses for the relative registration check.
    pub registration_poses: usize,
    pub stages: Stages,
    pub tool_keyframes: Option<Vec<ToolKeyframe>>,
    pub markers: Option<FiducialMap>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: "zero".into(),
            noise: NoiseSpec::zero(0),
            frames: 10,
            detect_thres: 10,
            ransac_iters: 1000,
            inlier_px: 2.0,
            samples: 500,
            duration: 50.0,
            handeye_train: 31,
            handeye_test: 11,
            correction_points: 8,
            correction_test: 8,
            registration_poses: 29,
            stages: Stages::default(),
            tool_keyframes: None,
            markers: None,
        }
    }
}

impl ScenarioSpec {
    /// Default spec with a noise preset applied.
    pub fn with_preset(preset: &str, seed: u64) -> Result<Self> {
        Ok(Self {
            seed,
            preset: preset.into(),
            noise: NoiseSpec::preset(preset, seed)?,
            ..Self::default()
        })
    }

    /// Same spec under another seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s.noise.seed = seed;
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        let positive = [
            ("frames", self.frames),
            ("samples", self.samples),
            ("ransac_iters", self.ransac_iters),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be at least 1")));
            }
        }
        if self.samples < 2 || !(self.duration > 0.0) {
            return Err(Error::Validation("need at least 2 samples over a positive duration".into()));
        }
        if !(self.inlier_px > 0.0) {
            return Err(Error::Validation("inlier threshold must be positive".into()));
        }
        if self.stages.handeye && (self.handeye_train < 3 || self.handeye_test < 2) {
            return Err(Error::Validation("hand-eye needs at least 3 training and 2 test stations".into()));
        }
        if self.stages.correction && (self.correction_points < 3 || self.correction_test < 1) {
            return Err(Error::Validation("correction needs at least 3 training points and 1 test point".into()));
        }
        if self.stages.relative_registration && self.registration_poses < 2 {
            return Err(Error::Validation("relative registration needs at least 2 scene poses".into()));
        }
        if let Some(keys) = &self.tool_keyframes {
            if keys.is_empty() || keys.windows(2).any(|w| w[1].t <= w[0].t) {
                return Err(Error::Validation("tool keyframes must be non-empty with increasing times".into()));
            }
        }
        Ok(())
    }

    pub fn registration_config(&self) -> RegistrationConfig {
        let mut robust = RobustConfig::pnp().with_seed(self.seed).with_threshold(self.inlier_px);
        robust.max_iterations = self.ransac_iters;
        RegistrationConfig {
            n_frame_thres: self.frames,
            n_detect_thres: self.detect_thres,
            robust,
        }
    }

    /// Scenario file: `key value...` lines. The preset is applied before the
    /// individual noise keys regardless of line order.
    pub fn parse(text: &str) -> Result<Self> {
        let recs: Vec<(usize, Vec<&str>)> = records(text).collect();
        let mut seed = 0u64;
        let mut preset = "zero".to_string();
        for (line, tokens) in &recs {
            match tokens[0] {
                "seed" => seed = one(tokens, *line)?.parse().map_err(|_| Error::parse(*line, "seed must be an unsigned integer"))?,
                "preset" => preset = one(tokens, *line)?.to_string(),
                _ => {}
            }
        }
        let mut spec = Self::with_preset(&preset, seed).map_err(|e| Error::parse(0, e.to_string()))?;
        let mut keys = Vec::new();
        let mut markers = FiducialMap::new();
        let mut has_markers = false;
        for (line, tokens) in recs {
            let line_no = line;
            let count = |t: &[&str]| -> Result<usize> {
                one(t, line_no)?
                    .parse()
                    .map_err(|_| Error::parse(line_no, format!("`{}` expects a non-negative integer", t[0])))
            };
            let float = |t: &[&str]| -> Result<f64> { parse_f64(one(t, line_no)?, line_no) };
            let n = &mut spec.noise;
            match tokens[0] {
                "seed" | "preset" => {}
                "pixel_sigma" => n.pixel_sigma = float(&tokens)?,
                "outlier_rate" => n.outlier_rate = float(&tokens)?,
                "outlier_px" => n.outlier_px = float(&tokens)?,
                "psm_rot_deg" => n.psm_rot_deg = float(&tokens)?,
                "psm_trans_mm" => n.psm_trans_mm = float(&tokens)?,
                "ecm_rot_deg" => n.ecm_rot_deg = float(&tokens)?,
                "ecm_trans_mm" => n.ecm_trans_mm = float(&tokens)?,
                "mount_rot_deg" => n.mount_rot_deg = float(&tokens)?,
                "mount_trans_mm" => n.mount_trans_mm = float(&tokens)?,
                "occlude" => {
                    let ints: Vec<usize> = tokens[1..]
                        .iter()
                        .map(|t| t.parse().map_err(|_| Error::parse(line, "occlude expects `label first last`")))
                        .collect::<Result<_>>()?;
                    let [label, first, last] = ints[..] else {
                        return Err(Error::parse(line, "occlude expects `label first last`"));
                    };
                    if last < first {
                        return Err(Error::parse(line, "occlusion ends before it starts"));
                    }
                    let label = u32::try_from(label).map_err(|_| Error::parse(line, "marker label out of range"))?;
                    n.occlusions.push(Occlusion { label, first_frame: first, last_frame: last });
                }
                "frames" => spec.frames = count(&tokens)?,
                "detect_thres" => spec.detect_thres = count(&tokens)?,
                "ransac_iters" => spec.ransac_iters = count(&tokens)?,
                "inlier_px" => spec.inlier_px = float(&tokens)?,
                "samples" => spec.samples = count(&tokens)?,
                "duration" => spec.duration = float(&tokens)?,
                "handeye_train" => spec.handeye_train = count(&tokens)?,
                "handeye_test" => spec.handeye_test = count(&tokens)?,
                "correction_points" => spec.correction_points = count(&tokens)?,
                "correction_test" => spec.correction_test = count(&tokens)?,
                "registration_poses" => spec.registration_poses = count(&tokens)?,
                "stage" => {
                    let [_, name, state] = tokens[..] else {
                        return Err(Error::parse(line, "stage expects `name on|off`"));
                    };
                    let on = match state {
                        "on" => true,
                        "off" => false,
                        _ => return Err(Error::parse(line, "stage state must be `on` or `off`")),
                    };
                    *spec
                        .stages
                        .slot(name)
                        .ok_or_else(|| Error::parse(line, format!("unknown stage `{name}`")))? = on;
                }
                "tool_keyframe" => {
                    if tokens.len() != 12 {
                        return Err(Error::parse(line, "tool_keyframe expects `t qw qx qy qz tx ty tz q6 q7 thetaJ`"));
                    }
                    let t = parse_f64(tokens[1], line)?;
                    let pose = parse_pose(&tokens[2..9], line)?;
                    let [q6, q7, theta_j] = parse_floats::<3>(&tokens[9..12], line)?;
                    keys.push(ToolKeyframe { t, pose, joints: JointState::new(q6, q7, theta_j) });
                }
                "marker" => {
                    if tokens.len() != 14 {
                        return Err(Error::parse(line, "marker expects a label and 12 corner coordinates"));
                    }
                    let label = tokens[1].parse().map_err(|_| Error::parse(line, "bad marker label"))?;
                    let v = parse_floats::<12>(&tokens[2..], line)?;
                    let corners: Corners3 = std::array::from_fn(|i| Point3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]));
                    markers.insert(label, corners).map_err(|e| Error::parse(line, e.to_string()))?;
                    has_markers = true;
                }
                other => return Err(Error::parse(line, format!("unknown scenario key `{other}`"))),
            }
        }
        if !keys.is_empty() {
            spec.tool_keyframes = Some(keys);
        }
        if has_markers {
            spec.markers = Some(markers);
        }
        spec.validate().map_err(|e| Error::parse(0, e.to_string()))?;
        Ok(spec)
    }

    /// Full spec with every noise value spelled out; parses back to an equal spec.
    pub fn to_text(&self) -> String {
        let n = &self.noise;
        let mut out = String::new();
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "preset {}", self.preset);
        for (k, v) in [
            ("pixel_sigma", n.pixel_sigma),
            ("outlier_rate", n.outlier_rate),
            ("outlier_px", n.outlier_px),
            ("psm_rot_deg", n.psm_rot_deg),
            ("psm_trans_mm", n.psm_trans_mm),
            ("ecm_rot_deg", n.ecm_rot_deg),
            ("ecm_trans_mm", n.ecm_trans_mm),
            ("mount_rot_deg", n.mount_rot_deg),
            ("mount_trans_mm", n.mount_trans_mm),
        ] {
            let _ = writeln!(out, "{k} {v}");
        }
        for o in &n.occlusions {
            let _ = writeln!(out, "occlude {} {} {}", o.label, o.first_frame, o.last_frame);
        }
        for (k, v) in [
            ("frames", self.frames),
            ("detect_thres", self.detect_thres),
            ("ransac_iters", self.ransac_iters),
        ] {
            let _ = writeln!(out, "{k} {v}");
        }
        let _ = writeln!(out, "inlier_px {}", self.inlier_px);
        let _ = writeln!(out, "samples {}", self.samples);
        let _ = writeln!(out, "duration {}", self.duration);
        for (k, v) in [
            ("handeye_train", self.handeye_train),
            ("handeye_test", self.handeye_test),
            ("correction_points", self.correction_points),
            ("correction_test", self.correction_test),
            ("registration_poses", self.registration_poses),
        ] {
            let _ = writeln!(out, "{k} {v}");
        }
        for name in Stages::NAMES {
            let _ = writeln!(out, "stage {name} {}", if self.stages.get(name) { "on" } else { "off" });
        }
        for k in self.tool_keyframes.iter().flatten() {
            let _ = write!(out, "tool_keyframe {} {} ", k.t, pose_string(&k.pose));
            write_floats(&mut out, &[k.joints.q6, k.joints.q7, k.joints.theta_j]);
            out.push('\n');
        }
        if let Some(m) = &self.markers {
            for (label, corners) in m.iter() {
                let _ = write!(out, "marker {label} ");
                write_floats(&mut out, &corners.iter().flat_map(|c| [c.x, c.y, c.z]).collect::<Vec<_>>());
                out.push('\n');
            }
        }
        out
    }
}

fn one<'a>(tokens: &[&'a str], line: usize) -> Result<&'a str> {
    match tokens {
        [_, v] => Ok(v),
        _ => Err(Error::parse(line, format!("`{}` expects exactly one value", tokens[0]))),
    }
}

fn uniform<R: Rng>(rng: &mut R, half: f64) -> f64 {
    rng.random_range(-half..=half)
}

fn random_vector<R: Rng>(rng: &mut R, half: Vector3<f64>) -> Vector3<f64> {
    Vector3::new(uniform(rng, half.x), uniform(rng, half.y), uniform(rng, half.z))
}

fn random_rotation<R: Rng>(rng: &mut R) -> RigidTransform {
    let q = nalgebra::Quaternion::new(
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample(rand_distr::StandardNormal),
        rng.sample(rand_distr::StandardNormal),
        rng.sample(rand_distr::StandardNormal),
    );
    RigidTransform::from_rotation(nalgebra::UnitQuaternion::from_quaternion(q))
}

/// A square marker of side `side` centred at `center`, tilted about x.
fn marker(center: Point3, side: f64, tilt_deg: f64) -> Corners3 {
    let r = RigidTransform::from_axis_angle(Vector3::x(), tilt_deg.to_radians());
    let h = side / 2.0;
    [(-h, h), (h, h), (h, -h), (-h, -h)].map(|(x, y)| center + r.transform_vector(&Vector3::new(x, y, 0.0)))
}

/// Six 20 mm markers on a board, one raised and tilted so the set is not coplanar.
fn default_fiducials() -> FiducialMap {
    let mut map = FiducialMap::new();
    let layout = [
        (Point3::new(-45.0, -30.0, 0.0), 0.0),
        (Point3::new(0.0, -35.0, 0.0), 0.0),
        (Point3::new(45.0, -30.0, 0.0), 0.0),
        (Point3::new(-40.0, 30.0, 0.0), 0.0),
        (Point3::new(40.0, 30.0, 0.0), 0.0),
        (Point3::new(0.0, 25.0, 12.0), 20.0),
    ];
    for (label, (c, tilt)) in layout.into_iter().enumerate() {
        map.insert(label as u32, marker(c, 20.0, tilt)).expect("default markers are valid");
    }
    map
}

fn endoscope(side: CameraSide) -> CameraTruth {
    let (t, w) = match side {
        CameraSide::Left => (Vector3::new(2.7, 0.4, 12.0), Vector3::new(0.02, -0.03, 0.01)),
        CameraSide::Right => (Vector3::new(-2.7, 0.4, 12.0), Vector3::new(0.015, -0.03, -0.012)),
    };
    CameraTruth {
        intrinsics: CameraIntrinsics::pinhole(1100.0, 1100.0, 640.0, 512.0, 1280.0, 1024.0)
            .with_distortion(-0.12, 0.04, 0.0, 0.0, 0.0),
        hand_eye: RigidTransform::from_rotation_vector(w, t),
    }
}

/// End-effector pose with the tip at `tip` and the jaws pointing roughly
/// down at the board.
pub(super) fn tool_pose<R: Rng>(rng: &mut R, tip: Point3) -> RigidTransform {
    let approach = Vector3::new(uniform(rng, 0.6), uniform(rng, 0.6), -1.0).normalize();
    let seed = if approach.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x = (seed - approach * seed.dot(&approach)).normalize();
    let y = approach.cross(&x);
    let r = nalgebra::Matrix3::from_columns(&[x, y, approach]);
    let roll = RigidTransform::from_axis_angle(Vector3::z(), uniform(rng, std::f64::consts::PI));
    RigidTransform::from_matrix_parts(&r, tip.coords) * roll
}

pub(super) fn random_tip<R: Rng>(rng: &mut R) -> Point3 {
    Point3::new(uniform(rng, 40.0), uniform(rng, 30.0), rng.random_range(15.0..45.0))
}

fn generate_tool<R: Rng>(rng: &mut R, duration: f64) -> Vec<ToolKeyframe> {
    let n = 9;
    (0..n)
        .map(|i| {
            let tip = random_tip(rng);
            ToolKeyframe {
                t: duration * i as f64 / (n - 1) as f64,
                pose: tool_pose(rng, tip),
                joints: JointState::new(uniform(rng, 0.8), uniform(rng, 0.8), rng.random_range(0.0..1.0)),
            }
        })
        .collect()
}

/// A viewpoint looking at the board from above at `distance` mm.
pub(super) fn viewpoint<R: Rng>(rng: &mut R, distance: f64, max_tilt_deg: f64, max_roll_deg: f64) -> RigidTransform {
    let target = Point3::new(uniform(rng, 12.0), uniform(rng, 12.0), 0.0);
    let tilt = rng.random_range(0.0..max_tilt_deg).to_radians();
    let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = Vector3::new(tilt.sin() * azimuth.cos(), tilt.sin() * azimuth.sin() - 0.25, tilt.cos()).normalize();
    let up = RigidTransform::from_axis_angle(dir, uniform(rng, max_roll_deg.to_radians())).transform_vector(&Vector3::y());
    look_at(target + dir * distance, target, up)
}

fn generate_session<R: Rng>(rng: &mut R, world: &WorldTruth, world_to_base: RigidTransform, duration: f64) -> Result<Session> {
    let mut session = Session {
        world_to_base,
        world_to_scene: RigidTransform::identity(),
        ecm: Vec::new(),
    };
    let n = 5;
    for i in 0..n {
        let distance = rng.random_range(185.0..215.0);
        let view = viewpoint(rng, distance, 12.0, 15.0);
        let ecm = world.ecm_for_camera(&session, CameraSide::Left, &view)?;
        session.ecm.push((duration * i as f64 / (n - 1) as f64, ecm));
    }
    Ok(session)
}

/// Ground truth for a spec under `seed`. Session 0 has a fixed base placement;
/// session 1 moves the setup joints arbitrarily.
pub fn build_world(spec: &ScenarioSpec, seed: u64) -> Result<WorldTruth> {
    let mut rng = stage_rng(seed, stream::WORLD);
    let instrument = "psm1".to_string();
    let mut world = WorldTruth {
        fiducials: spec.markers.clone().unwrap_or_else(default_fiducials),
        cameras: SIDES.into_iter().map(|s| (s, endoscope(s))).collect(),
        corrections: BTreeMap::from([(
            instrument.clone(),
            RigidTransform::from_rotation_vector(Vector3::new(0.012, -0.008, 0.015), Vector3::new(1.8, -1.2, 2.5)),
        )]),
        instrument,
        model: InstrumentModel::default(),
        tool: Vec::new(),
        psm_to_marker: RigidTransform::from_rotation_vector(Vector3::new(0.0, 0.3, 0.0), Vector3::new(0.0, 0.0, 6.0)),
        sessions: Vec::new(),
    };
    world.tool = match &spec.tool_keyframes {
        Some(k) => k.clone(),
        None => generate_tool(&mut rng, spec.duration),
    };
    let base_a = RigidTransform::from_rotation_vector(Vector3::new(0.3, -0.2, 1.0), Vector3::new(100.0, -350.0, 420.0));
    let base_b = random_rotation(&mut rng) * RigidTransform::from_translation(random_vector(&mut rng, Vector3::repeat(500.0)));
    let a = generate_session(&mut rng, &world, base_a, spec.duration)?;
    let b = generate_session(&mut rng, &world, base_b, spec.duration)?;
    world.sessions = vec![a, b];
    Ok(world)
}

/// Outcome of one run: metrics keyed by stage, the recording, and the raw
/// per-vertex overlay errors.
#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub spec: ScenarioSpec,
    pub metrics: BTreeMap<String, f64>,
    pub trajectory: Trajectory,
    /// Per-vertex overlay error, px, keyed `same.left`, `cross.right`, ...
    pub overlay_px: BTreeMap<String, Vec<f64>>,
}

impl ScenarioReport {
    pub fn get(&self, key: &str) -> Result<f64> {
        self.metrics
            .get(key)
            .copied()
            .ok_or_else(|| Error::Validation(format!("report has no metric `{key}`")))
    }

    /// `key value` lines: a header, the spec echo under `config.`, then metrics.
    pub fn to_text(&self) -> String {
        let mut out = String::from("#ghostline-report v1\n");
        for line in self.spec.to_text().lines() {
            let _ = writeln!(out, "config.{line}");
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k} {v}");
        }
        out
    }
}

#[derive(Default)]
struct Metrics(BTreeMap<String, f64>);

impl Metrics {
    fn put(&mut self, key: impl Into<String>, value: f64) {
        self.0.insert(key.into(), value);
    }

    fn put_rows(&mut self, prefix: &str, report: &PoseErrorReport) {
        for (k, v) in report.rows() {
            self.put(format!("{prefix}.{k}"), v);
        }
    }

    fn put_distribution(&mut self, prefix: &str, values: &[f64]) {
        let s = Summary::of(values);
        self.put(format!("{prefix}.mean"), s.mean);
        self.put(format!("{prefix}.std"), s.std);
        self.put(format!("{prefix}.median"), median(values));
        self.put(format!("{prefix}.p95"), percentile(values, 0.95));
        self.put(format!("{prefix}.max"), values.iter().copied().fold(f64::NAN, f64::max));
        self.put(format!("{prefix}.n"), values.len() as f64);
    }
}

pub(super) fn observe_burst<R: Rng>(
    world: &WorldTruth,
    side: CameraSide,
    camera_from_scene: &RigidTransform,
    spec: &ScenarioSpec,
    rng: &mut R,
) -> Result<Vec<crate::registration::DetectionBatch>> {
    (0..spec.frames)
        .map(|f| observe_fiducials(world, side, camera_from_scene, f, &spec.noise, rng))
        .collect()
}

pub(super) fn register<R: Rng>(
    world: &WorldTruth,
    side: CameraSide,
    camera_from_scene: &RigidTransform,
    spec: &ScenarioSpec,
    rng: &mut R,
) -> Result<crate::registration::Registration> {
    let frames = observe_burst(world, side, camera_from_scene, spec, rng)?;
    register_scene(&frames, &world.fiducials, &world.camera(side)?.intrinsics, &spec.registration_config())
}

struct HandEyeStage {
    estimate: BTreeMap<CameraSide, RigidTransform>,
}

fn run_handeye(world: &WorldTruth, spec: &ScenarioSpec, report: &mut Metrics) -> Result<HandEyeStage> {
    let mut estimate: BTreeMap<CameraSide, RigidTransform> =
        SIDES.into_iter().map(|s| (s, world.cameras[&s].hand_eye)).collect();
    if !spec.stages.handeye {
        return Ok(HandEyeStage { estimate });
    }
    let mut rng = stage_rng(spec.seed, stream::HANDEYE);
    let session = world.session(0)?;
    let n = spec.handeye_train + spec.handeye_test;
    let mut ecm_reported = Vec::with_capacity(n);
    let mut regs: BTreeMap<CameraSide, Vec<RigidTransform>> = BTreeMap::new();
    for _ in 0..n {
        let distance = rng.random_range(170.0..230.0);
        let view = viewpoint(&mut rng, distance, 35.0, 60.0);
        let ecm = world.ecm_for_camera(session, CameraSide::Left, &view)?;
        ecm_reported.push(reported_ecm_pose(&ecm, &spec.noise, &mut rng));
        for side in SIDES {
            let c = world.registration(session, side, &ecm)?;
            regs.entry(side).or_default().push(*register(world, side, &c, spec, &mut rng)?.pose());
        }
    }
    let split = spec.handeye_train;
    for side in SIDES {
        let cams = &regs[&side];
        let train = build_motion_pairs(&cams[..split], &ecm_reported[..split])?;
        let test = build_motion_pairs(&cams[split..], &ecm_reported[split..])?;
        let fit = solve_handeye(&train, &RobustConfig::handeye().with_seed(spec.seed))?;
        let h = fit.transform.inverse();
        let name = side.name();
        let (deg, mm): (Vec<f64>, Vec<f64>) = test.iter().map(|p| pair_residual(p, &fit.transform)).unzip();
        let rot = Summary::of(&deg);
        let trans = Summary::of(&mm);
        report.put(format!("handeye.{name}.test_rot_deg.mean"), rot.mean);
        report.put(format!("handeye.{name}.test_rot_deg.std"), rot.std);
        report.put(format!("handeye.{name}.test_trans_mm.mean"), trans.mean);
        report.put(format!("handeye.{name}.test_trans_mm.std"), trans.std);
        report.put(format!("handeye.{name}.test_pairs"), test.len() as f64);
        report.put(format!("handeye.{name}.train_inliers"), fit.inlier_count() as f64);
        let abs = PoseError::between(&h, &world.cameras[&side].hand_eye)?;
        report.put(format!("handeye.{name}.abs_l2_mm"), abs.l2_mm);
        report.put(format!("handeye.{name}.abs_angle_deg"), abs.angle_deg);
        estimate.insert(side, h);
    }
    Ok(HandEyeStage { estimate })
}

fn run_correction(
    world: &WorldTruth,
    spec: &ScenarioSpec,
    registration: &RigidTransform,
    hand_eye: &RigidTransform,
    report: &mut Metrics,
) -> Result<RigidTransform> {
    if !spec.stages.correction {
        return Ok(world.correction());
    }
    let mut rng = stage_rng(spec.seed, stream::CORRECTION);
    let session = world.session(0)?;
    let ecm = session.initial_ecm();
    let mut sample = |count: usize| -> Result<PointPairSet> {
        let mut actual = Vec::with_capacity(count);
        let mut reported = Vec::with_capacity(count);
        for _ in 0..count {
            let tip = random_tip(&mut rng);
            let pose = tool_pose(&mut rng, tip);
            let r = reported_psm_pose(world, session, &ecm, &pose, &spec.noise, &mut rng)?;
            actual.push(registration.transform_point(&tip));
            reported.push((hand_eye.inverse() * r).transform_point(&Point3::origin()));
        }
        PointPairSet::new(actual, reported)
    };
    let train = sample(spec.correction_points)?;
    let test = sample(spec.correction_test)?;
    let fit = fit_correction(&train, &RobustConfig::correction().with_seed(spec.seed))?;
    let residuals: Vec<f64> = test
        .reported
        .iter()
        .zip(&test.actual)
        .map(|(r, a)| (fit.transform.transform_point(r) - a).norm())
        .collect();
    let s = Summary::of(&residuals);
    report.put("correction.train_rms_mm", fit.rms);
    report.put("correction.train_inliers", fit.inliers.iter().filter(|&&b| b).count() as f64);
    report.put("correction.test_mm.mean", s.mean);
    report.put("correction.test_mm.std", s.std);
    Ok(fit.transform)
}

/// Times of the recorded samples.
pub(super) fn sample_times(spec: &ScenarioSpec) -> Vec<f64> {
    (0..spec.samples)
        .map(|i| spec.duration * i as f64 / (spec.samples - 1) as f64)
        .collect()
}

/// Estimated against true `ᶜT_ar` of the grasped marker over the recording.
pub fn evaluate_pose_estimation(
    world: &WorldTruth,
    state: &SessionState,
    trajectory: &Trajectory,
    reported_ecm: &[RigidTransform],
    mount_error: &RigidTransform,
) -> Result<PoseErrorReport> {
    let session = world.session(0)?;
    let mut est = Vec::with_capacity(trajectory.samples().len());
    let mut truth = Vec::with_capacity(est.capacity());
    for (s, ecm_rep) in trajectory.samples().iter().zip(reported_ecm) {
        est.push(view_to_scene(state, ecm_rep, CameraSide::Left)? * s.pose * world.psm_to_marker);
        let (pose, _) = world.tool_at(s.t);
        let reg = world.registration(session, CameraSide::Left, &session.ecm_at(s.t))?;
        truth.push(reg * pose * world.psm_to_marker * *mount_error);
    }
    PoseErrorReport::from_pairs(&est, &truth)
}

/// Relative scene motion recovered by repeated registration against the
/// applied motion, for every pose after the first.
pub fn evaluate_registration_relative<R: Rng>(
    world: &WorldTruth,
    spec: &ScenarioSpec,
    side: CameraSide,
    motions: &[RigidTransform],
    rng: &mut R,
) -> Result<PoseErrorReport> {
    let session = world.session(0)?;
    let base = world.registration(session, side, &session.initial_ecm())?;
    let poses: Vec<RigidTransform> = motions
        .iter()
        .map(|d| register(world, side, &(base * *d), spec, rng).map(|r| *r.pose()))
        .collect::<Result<_>>()?;
    let est: Vec<RigidTransform> = poses[1..].iter().map(|c| poses[0].inverse() * *c).collect();
    let truth: Vec<RigidTransform> = motions[1..].iter().map(|d| motions[0].inverse() * *d).collect();
    PoseErrorReport::from_pairs(&est, &truth)
}

/// Per-vertex pixel error of the replayed overlay against the true instrument,
/// over vertices the true camera can see, plus the worst NDC deviation.
fn overlay_errors(
    world: &WorldTruth,
    session: &Session,
    state: &SessionState,
    trajectory: &Trajectory,
    reported_ecm: &[RigidTransform],
    side: CameraSide,
) -> Result<(Vec<f64>, f64)> {
    let k = world.camera(side)?.intrinsics;
    let render = k.render_matrix();
    let frustum = k.frustum();
    let mut errors = Vec::new();
    let mut max_ndc = 0.0f64;
    for (s, ecm_rep) in trajectory.samples().iter().zip(reported_ecm) {
        let view_est = view_to_scene(state, ecm_rep, side)?;
        let view_true = world.registration(session, side, &session.ecm_at(s.t))?;
        let est = place_components(&s.pose, &s.joints, &world.model)?;
        let (pose, joints) = world.tool_at(s.t);
        let truth = place_components(&pose, &joints, &world.model)?;
        for c in Component::ALL {
            let to_est = view_est * *est.get(c);
            let to_true = view_true * *truth.get(c);
            for v in world.model.vertices(c) {
                let pt = to_true.transform_point(v);
                if !frustum.contains(&pt) {
                    continue;
                }
                let pe = to_est.transform_point(v);
                let (Some(nt), Some(ne)) = (to_ndc(&render, &pt), to_ndc(&render, &pe)) else {
                    continue;
                };
                if pe.z <= 0.0 {
                    continue;
                }
                max_ndc = max_ndc.max((ne.x - nt.x).abs()).max((ne.y - nt.y).abs());
                let a = k.ndc_to_pixel(&Point2::new(ne.x, ne.y));
                let b = k.ndc_to_pixel(&Point2::new(nt.x, nt.y));
                errors.push((a - b).norm());
            }
        }
    }
    Ok((errors, max_ndc))
}

/// Reported ECM poses over the sample times of a session.
pub(super) fn reported_ecm_track<R: Rng>(session: &Session, times: &[f64], noise: &NoiseSpec, rng: &mut R) -> Vec<RigidTransform> {
    times.iter().map(|t| reported_ecm_pose(&session.ecm_at(*t), noise, rng)).collect()
}

fn register_session<R: Rng>(
    world: &WorldTruth,
    session: &Session,
    spec: &ScenarioSpec,
    hand_eye: &BTreeMap<CameraSide, RigidTransform>,
    rng: &mut R,
    report: &mut Metrics,
    prefix: &str,
) -> Result<SessionState> {
    let ecm = session.initial_ecm();
    let mut setups = BTreeMap::new();
    for side in SIDES {
        let truth = world.registration(session, side, &ecm)?;
        let reg = register(world, side, &truth, spec, rng)?;
        let err = PoseError::between(reg.pose(), &truth)?;
        let name = side.name();
        report.put(format!("{prefix}.{name}.l2_mm"), err.l2_mm);
        report.put(format!("{prefix}.{name}.angle_deg"), err.angle_deg);
        report.put(format!("{prefix}.{name}.rms_px"), reg.solution.rms_residual);
        report.put(format!("{prefix}.{name}.detections"), reg.n_detect as f64);
        setups.insert(side, CameraSetup { registration: *reg.pose(), hand_eye: hand_eye[&side] });
    }
    let initial = reported_ecm_pose(&ecm, &spec.noise, rng);
    Ok(SessionState::new(initial, setups[&CameraSide::Left]).with_camera(CameraSide::Right, setups[&CameraSide::Right]))
}

/// Runs every enabled stage in a freshly built world.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<ScenarioReport> {
    spec.validate()?;
    let world = build_world(spec, spec.seed)?;
    run_in_world(&world, spec)
}

/// Runs every enabled stage against the given ground truth.
pub fn run_in_world(world: &WorldTruth, spec: &ScenarioSpec) -> Result<ScenarioReport> {
    spec.validate()?;
    let session_a = world.session(0)?;
    let session_b = world.session(1)?;
    let mut report = Metrics::default();
    let mut overlay_px = BTreeMap::new();

    let hand_eye = run_handeye(world, spec, &mut report)?.estimate;

    let mut rng = stage_rng(spec.seed, stream::REGISTRATION);
    let mut state = register_session(world, session_a, spec, &hand_eye, &mut rng, &mut report, "registration")?;

    let t_cor = run_correction(world, spec, &state.camera(CameraSide::Left)?.registration, &hand_eye[&CameraSide::Left], &mut report)?;
    state = state.with_correction(CameraSide::Left, &world.instrument, t_cor);

    // record in session A
    let mut rng = stage_rng(spec.seed, stream::RECORD);
    let times = sample_times(spec);
    let ecm_a = reported_ecm_track(session_a, &times, &spec.noise, &mut rng);
    let mut recorder = Recorder::new(state.clone());
    let mut scene_err = Vec::with_capacity(times.len());
    for (t, ecm_rep) in times.iter().zip(&ecm_a) {
        let (pose, joints) = world.tool_at(*t);
        let reported = reported_psm_pose(world, session_a, &session_a.ecm_at(*t), &pose, &spec.noise, &mut rng)?;
        let sample = recorder.record(ecm_rep, &reported, joints, *t, &world.instrument)?;
        scene_err.push(PoseError::between(&sample.pose, &pose)?);
    }
    let trajectory = recorder.finish()?;
    let scene = PoseErrorReport { samples: scene_err };
    report.put_rows("record.scene", &scene);
    report.put("record.scene.l2_mm.max", scene.l2_values().into_iter().fold(0.0, f64::max));

    let mut mount_rng = stage_rng(spec.seed, stream::MOUNT);
    let mount = random_perturbation(spec.noise.mount_rot_deg, spec.noise.mount_trans_mm, &mut mount_rng)
        .unwrap_or_else(RigidTransform::identity);
    let pose_est = evaluate_pose_estimation(world, &state, &trajectory, &ecm_a, &mount)?;
    report.put_rows("pose_estimation", &pose_est);

    if spec.stages.relative_registration {
        let mut rng = stage_rng(spec.seed, stream::RELATIVE);
        let motions: Vec<RigidTransform> = (0..spec.registration_poses)
            .map(|i| {
                if i == 0 {
                    return RigidTransform::identity();
                }
                let w = random_vector(&mut rng, Vector3::repeat(10f64.to_radians()));
                let t = random_vector(&mut rng, Vector3::new(15.0, 15.0, 10.0));
                RigidTransform::from_rotation_vector(w, t)
            })
            .collect();
        for side in SIDES {
            let rel = evaluate_registration_relative(world, spec, side, &motions, &mut rng)?;
            report.put_rows(&format!("scene_registration.{}", side.name()), &rel);
        }
    }

    if spec.stages.playback {
        let mut rng = stage_rng(spec.seed, stream::PLAYBACK);
        let state_b = register_session(world, session_b, spec, &hand_eye, &mut rng, &mut report, "playback_registration")?;
        let ecm_b = reported_ecm_track(session_b, &times, &spec.noise, &mut rng);
        // replay in the recording setup sees fresh kinematic noise
        let ecm_a_replay = reported_ecm_track(session_a, &times, &spec.noise, &mut rng);
        for side in SIDES {
            for (label, session, st, ecm) in [("same", session_a, &state, &ecm_a_replay), ("cross", session_b, &state_b, &ecm_b)] {
                let (errors, max_ndc) = overlay_errors(world, session, st, &trajectory, ecm, side)?;
                let key = format!("{label}.{}", side.name());
                report.put_distribution(&format!("overlay.{key}.px"), &errors);
                report.put(format!("overlay.{key}.max_ndc"), max_ndc);
                overlay_px.insert(key, errors);
            }
        }
    }

    Ok(ScenarioReport {
        spec: spec.clone(),
        metrics: report.0,
        trajectory,
        overlay_px,
    })
}

/// One run per seed in `seed .. seed + runs`, each in its own world.
/// Results keep seed order.
pub fn monte_carlo(spec: &ScenarioSpec, runs: usize) -> Vec<Result<ScenarioReport>> {
    let seeds: Vec<u64> = (0..runs as u64).map(|i| spec.seed + i).collect();
    let run = |s: &u64| run_scenario(&spec.reseeded(*s));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(run).collect()
    }
}

/// Across-run statistics of every metric: `key.{median,mean,std,p95}`.
pub fn aggregate(reports: &[ScenarioReport]) -> BTreeMap<String, f64> {
    let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in &r.metrics {
            columns.entry(k).or_default().push(*v);
        }
    }
    let mut out = BTreeMap::new();
    for (k, values) in columns {
        let s = Summary::of(&values);
        out.insert(format!("{k}.median"), median(&values));
        out.insert(format!("{k}.mean"), s.mean);
        out.insert(format!("{k}.std"), s.std);
        out.insert(format!("{k}.p95"), percentile(&values, 0.95));
    }
    out
}
