use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ghostline_core::formats::parse_pose_sequence;
use ghostline_core::pipeline::Trajectory;
use tempfile::TempDir;

fn ghostline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghostline")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ghostline(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    ghostline(args).status.code().unwrap()
}

struct Dataset {
    dir: TempDir,
}

impl Dataset {
    fn new(preset: &str, seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        ok(&["generate", "--preset", preset, "--seed", &seed.to_string(), "--samples", "120", "--out-dir", dir.path().to_str().unwrap()]);
        Self { dir }
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn register(&self, detections: &str, out: &str) {
        ok(&["register", "--detections", &self.p(detections), "--map", &self.p("map.txt"), "--intrinsics", &self.p("intrinsics_left.txt"), "--out", &self.p(out)]);
    }

    /// register, calibrate, fit the correction and record; returns the trajectory path.
    fn record(&self) -> String {
        self.register("detections_left.txt", "reg_a.txt");
        ok(&["calibrate-handeye", "--camera-poses", &self.p("handeye_camera.txt"), "--robot-poses", &self.p("handeye_robot.txt"), "--out", &self.p("he.txt")]);
        ok(&["fit-correction", "--pairs", &self.p("correction_pairs.txt"), "--out", &self.p("cor.txt")]);
        ok(&["record", "--stream", &self.p("stream.txt"), "--registration", &self.p("reg_a.txt"), "--hand-eye", &self.p("he.txt"), "--correction", &self.p("cor.txt"), "--out", &self.p("traj.txt")]);
        self.p("traj.txt")
    }

    fn playback(&self, registration: &str, hand_eye: &str, speed: &str, out: &str) -> String {
        ok(&[
            "playback", "--trajectory", &self.p("traj.txt"), "--registration", &self.p(registration), "--hand-eye", &self.p(hand_eye),
            "--intrinsics", &self.p("intrinsics_left.txt"), "--ecm", &self.p("playback_ecm.txt"), "--speed", speed, "--fps", "10", "--out", &self.p(out),
        ]);
        fs::read_to_string(self.path(out)).unwrap()
    }
}

fn pose(path: &Path) -> ghostline_core::RigidTransform {
    parse_pose_sequence(&fs::read_to_string(path).unwrap()).unwrap()[0]
}

fn meta(overlay: &str, key: &str) -> f64 {
    overlay
        .lines()
        .find_map(|l| l.strip_prefix(&format!("#meta {key} ")))
        .unwrap()
        .parse()
        .unwrap()
}

fn numbers(overlay: &str) -> Vec<f64> {
    overlay
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| l.split_whitespace().enumerate().filter(|(i, _)| *i != 2).map(|(_, v)| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn noiseless_files_reproduce_the_generator_truth() {
    let d = Dataset::new("zero", 3);
    d.record();
    for (estimate, truth) in [("reg_a.txt", "truth/registration_left.txt"), ("he.txt", "truth/hand_eye_left.txt"), ("cor.txt", "truth/correction.txt")] {
        let (a, b) = (pose(&d.path(estimate)), pose(&d.path(truth)));
        assert!(a.distance_to(&b) < 1e-6 && a.angle_to(&b) < 1e-6, "{estimate}");
    }
    d.register("playback_detections_left.txt", "reg_b.txt");
    let estimated = numbers(&d.playback("reg_b.txt", "he.txt", "1", "ov_est.txt"));
    let exact = numbers(&d.playback("truth/playback_registration_left.txt", "truth/hand_eye_left.txt", "1", "ov_true.txt"));
    assert_eq!(estimated.len(), exact.len());
    let worst = estimated.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn doubling_the_speed_halves_the_playback() {
    let d = Dataset::new("paper-comparable", 4);
    d.record();
    d.register("playback_detections_left.txt", "reg_b.txt");
    let normal = d.playback("reg_b.txt", "he.txt", "1", "ov1.txt");
    let fast = d.playback("reg_b.txt", "he.txt", "2", "ov2.txt");
    assert!((meta(&normal, "duration_s") - 2.0 * meta(&fast, "duration_s")).abs() < 1e-12);
    assert_eq!(meta(&fast, "speed"), 2.0);
    assert!(meta(&fast, "frames") < meta(&normal, "frames"));
}

#[test]
fn recorded_trajectory_round_trips_through_its_file() {
    let d = Dataset::new("paper-comparable", 5);
    let path = d.record();
    let text = fs::read_to_string(&path).unwrap();
    let traj = Trajectory::parse(&text).unwrap();
    assert_eq!(traj.to_text(), text);
    assert_eq!(traj.samples().len(), 120);
    assert_eq!(traj.session.registered_at, 0.0);
}

#[test]
fn nine_detections_exit_with_3() {
    let d = Dataset::new("zero", 6);
    let text = fs::read_to_string(d.path("detections_left.txt")).unwrap();
    let nine: String = text.lines().filter(|l| !l.starts_with('#')).take(9).map(|l| format!("{l}\n")).collect();
    fs::write(d.path("nine.txt"), nine).unwrap();
    let args = ["register", "--detections", &d.p("nine.txt"), "--map", &d.p("map.txt"), "--intrinsics", &d.p("intrinsics_left.txt"), "--out", &d.p("r.txt")];
    assert_eq!(code(&args), 3);
    assert!(!d.path("r.txt").exists());
}

#[test]
fn malformed_input_exits_with_2() {
    let d = Dataset::new("zero", 7);
    fs::write(d.path("bad.txt"), "0 1 10 20 30\n").unwrap();
    let args = ["register", "--detections", &d.p("bad.txt"), "--map", &d.p("map.txt"), "--intrinsics", &d.p("intrinsics_left.txt"), "--out", &d.p("r.txt")];
    assert_eq!(code(&args), 2);
    assert_eq!(code(&["register", "--detections"]), 2);
    assert_eq!(code(&["playback", "--speed", "-1"]), 2);
}

#[test]
fn identical_stations_are_unobservable_and_exit_with_5() {
    let dir = tempfile::tempdir().unwrap();
    let same = dir.path().join("same.txt");
    fs::write(&same, "0.5 0.5 0.5 0.5 10 20 30\n".repeat(6)).unwrap();
    let s = same.to_str().unwrap();
    let out = dir.path().join("x.txt");
    assert_eq!(code(&["calibrate-handeye", "--camera-poses", s, "--robot-poses", s, "--out", out.to_str().unwrap()]), 5);
}

#[test]
fn degenerate_correction_pairs_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.txt");
    let line: String = (0..5).map(|i| format!("{i} 0 0 {i} 0 0\n")).collect();
    fs::write(&pairs, line).unwrap();
    let out = dir.path().join("c.txt");
    assert_eq!(code(&["fit-correction", "--pairs", pairs.to_str().unwrap(), "--out", out.to_str().unwrap()]), 4);
}

#[test]
fn unknown_preset_is_a_validation_error() {
    assert_eq!(code(&["evaluate", "--preset", "hardware"]), 7);
}

#[test]
fn scenario_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.txt");
    fs::write(&file, "preset paper-comparable\nseed 9\nsamples 80\nstage relative_registration off\n").unwrap();
    let report = ok(&["evaluate", "--scenario", file.to_str().unwrap(), "--seed", "12", "--frames", "5"]);
    assert!(report.starts_with("#ghostline-report v1\n"));
    assert!(report.contains("config.seed 12\n"));
    assert!(report.contains("config.frames 5\n"));
    assert!(report.contains("config.samples 80\n"));
    assert!(!report.contains("\nscene_registration."));
    assert!(report.contains("\noverlay.cross.left.px.median "));
}

#[test]
fn multi_run_evaluation_writes_a_characterization() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.txt");
    ok(&["evaluate", "--preset", "paper-comparable", "--samples", "60", "--runs", "3", "--out", out.to_str().unwrap()]);
    let text = fs::read_to_string(out).unwrap();
    assert!(text.starts_with("#ghostline-characterization v1\n"));
    assert!(text.contains("\nruns 3\nruns.ok 3\n"));
    assert!(text.contains("\nhandeye.left.abs_l2_mm.median "));
}
