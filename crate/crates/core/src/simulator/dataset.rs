//! Synthetic input files for the command-line pipeline, drawn from the same
//! world and noise model as the scenario runner.

use std::collections::BTreeMap;

use rand::Rng;

use super::scenario::{observe_burst, random_tip, register, reported_ecm_track, sample_times, tool_pose, viewpoint, SIDES};
use super::{build_world, reported_ecm_pose, reported_psm_pose, stage_rng, stream, ScenarioSpec, WorldTruth};
use crate::calibration::PointPairSet;
use crate::camera::{CameraIntrinsics, CameraSide};
use crate::error::Result;
use crate::geometry::{Point3, RigidTransform};
use crate::pipeline::KinematicsSample;
use crate::registration::DetectionBatch;

/// Everything a file-based run needs, plus the truth to grade it against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub world: WorldTruth,
    pub intrinsics: BTreeMap<CameraSide, CameraIntrinsics>,
    /// Registration burst in the recording session.
    pub detections: BTreeMap<CameraSide, Vec<DetectionBatch>>,
    /// Registered left-camera poses at the hand-eye stations.
    pub handeye_camera: Vec<RigidTransform>,
    /// Reported ECM poses at the same stations.
    pub handeye_robot: Vec<RigidTransform>,
    /// Tool-tip pairs: actual from the true registration, reported through the
    /// true hand-eye.
    pub correction_pairs: PointPairSet,
    /// Recording-session kinematics; the first sample is at registration.
    pub stream: Vec<KinematicsSample>,
    /// Registration burst in the playback session.
    pub playback_detections: BTreeMap<CameraSide, Vec<DetectionBatch>>,
    /// Reported ECM poses during playback; the first entry is at registration.
    pub playback_ecm: Vec<(f64, RigidTransform)>,
}

pub fn generate_dataset(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let world = build_world(spec, spec.seed)?;
    let session_a = world.session(0)?;
    let session_b = world.session(1)?;

    let mut rng = stage_rng(spec.seed, stream::REGISTRATION);
    let mut detections = BTreeMap::new();
    for side in SIDES {
        let c = world.registration(session_a, side, &session_a.initial_ecm())?;
        detections.insert(side, observe_burst(&world, side, &c, spec, &mut rng)?);
    }

    let mut rng = stage_rng(spec.seed, stream::HANDEYE);
    let mut handeye_camera = Vec::new();
    let mut handeye_robot = Vec::new();
    for _ in 0..spec.handeye_train + spec.handeye_test {
        let distance = rng.random_range(170.0..230.0);
        let view = viewpoint(&mut rng, distance, 35.0, 60.0);
        let ecm = world.ecm_for_camera(session_a, CameraSide::Left, &view)?;
        handeye_robot.push(reported_ecm_pose(&ecm, &spec.noise, &mut rng));
        let c = world.registration(session_a, CameraSide::Left, &ecm)?;
        handeye_camera.push(*register(&world, CameraSide::Left, &c, spec, &mut rng)?.pose());
    }

    let mut rng = stage_rng(spec.seed, stream::CORRECTION);
    let e0 = session_a.initial_ecm();
    let reg = world.registration(session_a, CameraSide::Left, &e0)?;
    let h_inv = world.camera(CameraSide::Left)?.hand_eye.inverse();
    let mut actual = Vec::new();
    let mut reported = Vec::new();
    for _ in 0..spec.correction_points {
        let tip = random_tip(&mut rng);
        let pose = tool_pose(&mut rng, tip);
        let r = reported_psm_pose(&world, session_a, &e0, &pose, &spec.noise, &mut rng)?;
        actual.push(reg.transform_point(&tip));
        reported.push((h_inv * r).transform_point(&Point3::origin()));
    }
    let correction_pairs = PointPairSet::new(actual, reported)?;

    let mut rng = stage_rng(spec.seed, stream::RECORD);
    let times = sample_times(spec);
    let ecm_a = reported_ecm_track(session_a, &times, &spec.noise, &mut rng);
    let mut samples = Vec::with_capacity(times.len());
    for (t, ecm) in times.iter().zip(ecm_a) {
        let (pose, joints) = world.tool_at(*t);
        let psm = reported_psm_pose(&world, session_a, &session_a.ecm_at(*t), &pose, &spec.noise, &mut rng)?;
        samples.push(KinematicsSample { t: *t, ecm, psm, joints, instrument: world.instrument.clone() });
    }

    let mut rng = stage_rng(spec.seed, stream::PLAYBACK);
    let mut playback_detections = BTreeMap::new();
    for side in SIDES {
        let c = world.registration(session_b, side, &session_b.initial_ecm())?;
        playback_detections.insert(side, observe_burst(&world, side, &c, spec, &mut rng)?);
    }
    let ecm_b = reported_ecm_track(session_b, &times, &spec.noise, &mut rng);

    Ok(Dataset {
        intrinsics: world.cameras.iter().map(|(s, c)| (*s, c.intrinsics)).collect(),
        detections,
        handeye_camera,
        handeye_robot,
        correction_pairs,
        stream: samples,
        playback_detections,
        playback_ecm: times.into_iter().zip(ecm_b).collect(),
        world,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{build_motion_pairs, fit_correction, solve_handeye};
    use crate::pipeline::{record_sample, CameraSetup, SessionState};
    use crate::registration::{register_scene, RegistrationConfig};
    use crate::robust::RobustConfig;

    #[test]
    fn noiseless_dataset_reproduces_the_truth() {
        let spec = ScenarioSpec { samples: 50, ..ScenarioSpec::default() };
        let d = generate_dataset(&spec).unwrap();
        let w = &d.world;
        let a = &w.sessions[0];
        let k = d.intrinsics[&CameraSide::Left];

        let reg = register_scene(&d.detections[&CameraSide::Left], &w.fiducials, &k, &RegistrationConfig::default()).unwrap();
        let truth = w.registration(a, CameraSide::Left, &a.initial_ecm()).unwrap();
        assert!(reg.pose().distance_to(&truth) < 1e-6 && reg.pose().angle_to(&truth) < 1e-6);

        let pairs = build_motion_pairs(&d.handeye_camera, &d.handeye_robot).unwrap();
        let h = solve_handeye(&pairs, &RobustConfig::handeye()).unwrap().transform.inverse();
        let h_true = w.cameras[&CameraSide::Left].hand_eye;
        assert!(h.distance_to(&h_true) < 1e-6 && h.angle_to(&h_true) < 1e-6);

        let t_cor = fit_correction(&d.correction_pairs, &RobustConfig::correction()).unwrap().transform;
        let state = SessionState::new(d.stream[0].ecm, CameraSetup { registration: *reg.pose(), hand_eye: h })
            .with_correction(CameraSide::Left, &w.instrument, t_cor);
        for s in &d.stream {
            let rec = record_sample(&state, &s.ecm, &s.psm, s.joints, s.t, &s.instrument).unwrap();
            let (pose, _) = w.tool_at(s.t);
            assert!(rec.pose.distance_to(&pose) < 1e-6 && rec.pose.angle_to(&pose) < 1e-6);
        }
        assert_eq!(d.playback_ecm.len(), 50);
        assert_eq!(d.playback_ecm[0].1, w.sessions[1].initial_ecm());
    }
}
