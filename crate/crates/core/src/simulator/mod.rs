//! Synthetic ground truth standing in for the physical robot: a fiducial
//! scene, an endoscope on a moving ECM, an instrument following a scene-frame
//! path, and noisy observations of all of it.
//!
//! Frames: `W` is a fixed world frame. Each session places the ECM base
//! (`ᵂT_base`, the setup joints) and the scene (`ᵂT_s`) in `W` and moves the
//! ECM along `ᵇᵃˢᵉT_ecm(t)`.

mod dataset;
mod report;
mod scenario;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::camera::{CameraIntrinsics, CameraSide};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3, RigidTransform};
use crate::instrument::{InstrumentModel, JointState};
use crate::registration::{Detection, DetectionBatch, FiducialMap, MarkerId};

pub use dataset::{generate_dataset, Dataset};
pub use report::{median, percentile, PoseError, PoseErrorReport, Summary};
pub use scenario::{
    aggregate, build_world, evaluate_pose_estimation, evaluate_registration_relative, monte_carlo, run_in_world,
    run_scenario, ScenarioReport, ScenarioSpec, Stages,
};

/// Random stream per pipeline stage, so adding draws to one stage never
/// shifts another stage's samples.
pub mod stream {
    pub const WORLD: u64 = 0;
    pub const REGISTRATION: u64 = 1;
    pub const HANDEYE: u64 = 2;
    pub const CORRECTION: u64 = 3;
    pub const RECORD: u64 = 4;
    pub const RELATIVE: u64 = 5;
    pub const PLAYBACK: u64 = 6;
    pub const MOUNT: u64 = 7;
}

pub fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A marker hidden from the camera over an inclusive frame range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occlusion {
    pub label: MarkerId,
    pub first_frame: usize,
    pub last_frame: usize,
}

/// Noise injected into the synthetic observations.
///
/// Pose noise magnitudes are mean values: a perturbation's rotation angle
/// averages `*_rot_deg` and its translation norm averages `*_trans_mm`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Per-coordinate Gaussian corner noise, px.
    pub pixel_sigma: f64,
    /// Fraction of corners replaced by gross outliers.
    pub outlier_rate: f64,
    /// Outlier displacement, px (uniform between half and full magnitude).
    pub outlier_px: f64,
    /// API-reported PSM pose noise.
    pub psm_rot_deg: f64,
    pub psm_trans_mm: f64,
    /// ECM kinematics noise.
    pub ecm_rot_deg: f64,
    pub ecm_trans_mm: f64,
    /// Error in the instrument-to-marker mount used for pose evaluation.
    pub mount_rot_deg: f64,
    pub mount_trans_mm: f64,
    pub occlusions: Vec<Occlusion>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn zero(seed: u64) -> Self {
        Self {
            pixel_sigma: 0.0,
            outlier_rate: 0.0,
            outlier_px: 0.0,
            psm_rot_deg: 0.0,
            psm_trans_mm: 0.0,
            ecm_rot_deg: 0.0,
            ecm_trans_mm: 0.0,
            mount_rot_deg: 0.0,
            mount_trans_mm: 0.0,
            occlusions: Vec::new(),
            seed,
        }
    }

    /// Magnitudes under which the simulated stage errors fall in the same
    /// ranges as the physical system: sub-pixel corners with a few gross
    /// outliers, and degree/millimetre-level kinematic noise.
    pub fn paper_comparable(seed: u64) -> Self {
        Self {
            pixel_sigma: 0.5,
            outlier_rate: 0.05,
            outlier_px: 40.0,
            psm_rot_deg: 0.5,
            psm_trans_mm: 0.3,
            ecm_rot_deg: 0.5,
            ecm_trans_mm: 1.0,
            ..Self::zero(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "zero" => Ok(Self::zero(seed)),
            "paper-comparable" => Ok(Self::paper_comparable(seed)),
            other => Err(Error::Validation(format!(
                "unknown noise preset `{other}` (expected `zero` or `paper-comparable`)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mags = [
            self.pixel_sigma,
            self.outlier_px,
            self.psm_rot_deg,
            self.psm_trans_mm,
            self.ecm_rot_deg,
            self.ecm_trans_mm,
            self.mount_rot_deg,
            self.mount_trans_mm,
        ];
        if mags.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation("noise magnitudes must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::Validation("outlier rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_occluded(&self, label: MarkerId, frame: usize) -> bool {
        self.occlusions
            .iter()
            .any(|o| o.label == label && (o.first_frame..=o.last_frame).contains(&frame))
    }
}

/// Random rigid perturbation whose rotation angle and translation norm have
/// the given means. Always consumes six normal draws.
pub fn random_perturbation<R: Rng>(rot_mean_deg: f64, trans_mean_mm: f64, rng: &mut R) -> Option<RigidTransform> {
    // E|v| = σ·2·sqrt(2/π) for an isotropic 3D Gaussian
    let norm_mean = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    let mut draw = || {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        nalgebra::Vector3::from(v)
    };
    let w = draw() * (rot_mean_deg.to_radians() / norm_mean);
    let t = draw() * (trans_mean_mm / norm_mean);
    (rot_mean_deg > 0.0 || trans_mean_mm > 0.0).then(|| RigidTransform::from_rotation_vector(w, t))
}

/// Applies a random perturbation in the pose's own (child) frame.
pub fn perturb<R: Rng>(pose: RigidTransform, rot_mean_deg: f64, trans_mean_mm: f64, rng: &mut R) -> RigidTransform {
    match random_perturbation(rot_mean_deg, trans_mean_mm, rng) {
        Some(n) => pose * n,
        None => pose,
    }
}

/// `ᵂT_c` of a camera at `eye` looking at `target`; image up is as close to
/// `up` as the view direction allows.
pub fn look_at(eye: Point3, target: Point3, up: nalgebra::Vector3<f64>) -> RigidTransform {
    let z = (target - eye).normalize();
    let y = -(up - z * up.dot(&z)).normalize();
    let x = y.cross(&z);
    let r = nalgebra::Matrix3::from_columns(&[x, y, z]);
    RigidTransform::from_matrix_parts(&r, eye.coords)
}

fn interpolate_keys<T, F>(keys: &[(f64, T)], t: f64, lerp: F) -> T
where
    T: Clone,
    F: Fn(&T, &T, f64) -> T,
{
    let after = keys.partition_point(|(kt, _)| *kt <= t);
    if after == 0 {
        return keys[0].1.clone();
    }
    if after == keys.len() {
        return keys[keys.len() - 1].1.clone();
    }
    let (t0, a) = &keys[after - 1];
    if t == *t0 {
        return a.clone();
    }
    let (t1, b) = &keys[after];
    lerp(a, b, (t - t0) / (t1 - t0))
}

/// One physical setup: where the ECM base and the scene sit, and how the
/// ECM moves. The ECM pose at `t = 0` is the registration pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub world_to_base: RigidTransform,
    pub world_to_scene: RigidTransform,
    /// `(t, ᵇᵃˢᵉT_ecm)`, strictly increasing in `t`.
    pub ecm: Vec<(f64, RigidTransform)>,
}

impl Session {
    pub fn ecm_at(&self, t: f64) -> RigidTransform {
        interpolate_keys(&self.ecm, t, |a, b, s| a.interpolate(b, s))
    }

    pub fn initial_ecm(&self) -> RigidTransform {
        self.ecm[0].1
    }
}

/// Instrument path keyframe in the scene frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolKeyframe {
    pub t: f64,
    /// `ˢT_psm`
    pub pose: RigidTransform,
    pub joints: JointState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraTruth {
    pub intrinsics: CameraIntrinsics,
    /// `ᵉᶜᵐT_c`
    pub hand_eye: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldTruth {
    pub fiducials: FiducialMap,
    pub cameras: BTreeMap<CameraSide, CameraTruth>,
    /// True `T_cor` per instrument, acting in the initial left-camera frame.
    pub corrections: BTreeMap<String, RigidTransform>,
    pub instrument: String,
    pub model: InstrumentModel,
    pub tool: Vec<ToolKeyframe>,
    /// `ᵖˢᵐT_ar`: the grasped evaluation marker relative to the end-effector.
    pub psm_to_marker: RigidTransform,
    /// Session 0 records, session 1 plays back.
    pub sessions: Vec<Session>,
}

impl WorldTruth {
    pub fn camera(&self, side: CameraSide) -> Result<&CameraTruth> {
        self.cameras
            .get(&side)
            .ok_or_else(|| Error::Validation(format!("world has no {} camera", side.name())))
    }

    pub fn session(&self, index: usize) -> Result<&Session> {
        self.sessions
            .get(index)
            .ok_or_else(|| Error::Validation(format!("world has no session {index}")))
    }

    pub fn correction(&self) -> RigidTransform {
        self.corrections
            .get(&self.instrument)
            .copied()
            .unwrap_or_else(RigidTransform::identity)
    }

    /// `ᵂT_c` for a camera with the ECM at `ecm`.
    pub fn camera_pose(&self, session: &Session, side: CameraSide, ecm: &RigidTransform) -> Result<RigidTransform> {
        Ok(session.world_to_base * *ecm * self.camera(side)?.hand_eye)
    }

    /// True `ᶜT_s`.
    pub fn registration(&self, session: &Session, side: CameraSide, ecm: &RigidTransform) -> Result<RigidTransform> {
        Ok(self.camera_pose(session, side, ecm)?.inverse() * session.world_to_scene)
    }

    /// ECM pose that puts the given camera at `ᵂT_c`.
    pub fn ecm_for_camera(&self, session: &Session, side: CameraSide, world_to_camera: &RigidTransform) -> Result<RigidTransform> {
        Ok(session.world_to_base.inverse() * *world_to_camera * self.camera(side)?.hand_eye.inverse())
    }

    /// True `ˢT_psm` and joints at time `t`.
    pub fn tool_at(&self, t: f64) -> (RigidTransform, JointState) {
        let keys: Vec<(f64, ToolKeyframe)> = self.tool.iter().map(|k| (k.t, *k)).collect();
        let k = interpolate_keys(&keys, t, |a, b, s| ToolKeyframe {
            t: a.t + (b.t - a.t) * s,
            pose: a.pose.interpolate(&b.pose, s),
            joints: JointState::new(
                a.joints.q6 + (b.joints.q6 - a.joints.q6) * s,
                a.joints.q7 + (b.joints.q7 - a.joints.q7) * s,
                a.joints.theta_j + (b.joints.theta_j - a.joints.theta_j) * s,
            ),
        });
        (k.pose, k.joints)
    }

    pub fn tool_span(&self) -> (f64, f64) {
        (self.tool[0].t, self.tool[self.tool.len() - 1].t)
    }

    /// True `ᵉᶜᵐT_psm` for a scene-frame tool pose.
    pub fn true_ecm_to_psm(&self, session: &Session, ecm: &RigidTransform, scene_to_psm: &RigidTransform) -> RigidTransform {
        (session.world_to_base * *ecm).inverse() * session.world_to_scene * *scene_to_psm
    }
}

/// Corner detections of every unoccluded marker fully inside the image,
/// for a camera at `camera_from_scene` (`ᶜT_s`).
pub fn observe_fiducials<R: Rng>(
    world: &WorldTruth,
    side: CameraSide,
    camera_from_scene: &RigidTransform,
    frame_index: usize,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<DetectionBatch> {
    let k = world.camera(side)?.intrinsics;
    let pixel = Normal::new(0.0, noise.pixel_sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let mut batch = DetectionBatch::default();
    for (label, corners) in world.fiducials.iter() {
        // draws happen for every marker so occlusion does not shift the stream
        let jitter: [[f64; 2]; 4] = std::array::from_fn(|_| [pixel.sample(rng), pixel.sample(rng)]);
        let outliers: [Option<(f64, f64)>; 4] = std::array::from_fn(|_| {
            let hit = rng.random::<f64>() < noise.outlier_rate;
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let mag = noise.outlier_px * rng.random_range(0.5..1.0);
            hit.then(|| (mag * angle.cos(), mag * angle.sin()))
        });
        if noise.is_occluded(label, frame_index) {
            continue;
        }
        let mut projected = [Point2::origin(); 4];
        let mut visible = true;
        for (slot, c) in projected.iter_mut().zip(corners) {
            let p = camera_from_scene.transform_point(c);
            match k.project(&p) {
                Ok(px) if px.x >= 0.0 && px.y >= 0.0 && px.x < k.width && px.y < k.height => *slot = px,
                _ => visible = false,
            }
        }
        if !visible {
            continue;
        }
        for i in 0..4 {
            projected[i].x += jitter[i][0];
            projected[i].y += jitter[i][1];
            if let Some((dx, dy)) = outliers[i] {
                projected[i].x += dx;
                projected[i].y += dy;
            }
        }
        batch.detections.push(Detection { label, corners: projected });
    }
    Ok(batch)
}

/// What the robot API reports as `ᵉᶜᵐT_psm` for a true scene-frame tool pose.
///
/// The API error is modelled as the inverse of the true correction acting in
/// the initial left-camera frame, which is where the recording chain applies
/// `T_cor`; measurement noise is added on top.
pub fn reported_psm_pose<R: Rng>(
    world: &WorldTruth,
    session: &Session,
    ecm: &RigidTransform,
    scene_to_psm: &RigidTransform,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<RigidTransform> {
    let m = session.initial_ecm().inverse() * *ecm;
    let h = world.camera(CameraSide::Left)?.hand_eye;
    let g = m.inverse() * h;
    let clean = g * world.correction().inverse() * g.inverse() * world.true_ecm_to_psm(session, ecm, scene_to_psm);
    Ok(perturb(clean, noise.psm_rot_deg, noise.psm_trans_mm, rng))
}

/// What the ECM kinematics report for a true ECM pose.
pub fn reported_ecm_pose<R: Rng>(ecm: &RigidTransform, noise: &NoiseSpec, rng: &mut R) -> RigidTransform {
    perturb(*ecm, noise.ecm_rot_deg, noise.ecm_trans_mm, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn world() -> WorldTruth {
        build_world(&ScenarioSpec::default(), 7).unwrap()
    }

    #[test]
    fn look_at_points_the_optical_axis() {
        let t = look_at(Point3::new(0.0, -50.0, 200.0), Point3::origin(), Vector3::y());
        let axis = t.transform_vector(&Vector3::z());
        assert!((axis - Vector3::new(0.0, 50.0, -200.0).normalize()).norm() < 1e-12);
        assert!((t.rotation_matrix().determinant() - 1.0).abs() < 1e-12);
        // image up (-y) leans toward +y of the world
        assert!(t.transform_vector(&-Vector3::y()).y > 0.0);
    }

    #[test]
    fn noiseless_observation_is_exact_projection() {
        let w = world();
        let s = w.session(0).unwrap();
        let reg = w.registration(s, CameraSide::Left, &s.initial_ecm()).unwrap();
        let k = w.camera(CameraSide::Left).unwrap().intrinsics;
        let batch = observe_fiducials(&w, CameraSide::Left, &reg, 0, &NoiseSpec::zero(1), &mut stage_rng(1, 0)).unwrap();
        assert_eq!(batch.detections.len(), w.fiducials.len());
        for d in &batch.detections {
            for (px, c) in d.corners.iter().zip(w.fiducials.get(d.label).unwrap()) {
                assert_eq!(*px, k.project(&reg.transform_point(c)).unwrap());
            }
        }
    }

    #[test]
    fn occluded_marker_is_absent() {
        let w = world();
        let s = w.session(0).unwrap();
        let reg = w.registration(s, CameraSide::Left, &s.initial_ecm()).unwrap();
        let label = w.fiducials.labels().next().unwrap();
        let mut noise = NoiseSpec::zero(1);
        noise.occlusions.push(Occlusion { label, first_frame: 2, last_frame: 4 });
        let seen = |f| {
            observe_fiducials(&w, CameraSide::Left, &reg, f, &noise, &mut stage_rng(1, 0))
                .unwrap()
                .detections
                .iter()
                .any(|d| d.label == label)
        };
        assert!(seen(1) && !seen(2) && !seen(4) && seen(5));
    }

    #[test]
    fn pixel_noise_has_requested_spread() {
        let w = world();
        let s = w.session(0).unwrap();
        let reg = w.registration(s, CameraSide::Left, &s.initial_ecm()).unwrap();
        let clean = observe_fiducials(&w, CameraSide::Left, &reg, 0, &NoiseSpec::zero(0), &mut stage_rng(0, 0)).unwrap();
        let noise = NoiseSpec { pixel_sigma: 0.5, ..NoiseSpec::zero(3) };
        let mut rng = stage_rng(3, 1);
        let mut residuals = Vec::new();
        while residuals.len() < 10_000 {
            let b = observe_fiducials(&w, CameraSide::Left, &reg, 0, &noise, &mut rng).unwrap();
            for (d, c) in b.detections.iter().zip(&clean.detections) {
                for (p, q) in d.corners.iter().zip(&c.corners) {
                    residuals.push(p.x - q.x);
                    residuals.push(p.y - q.y);
                }
            }
        }
        let s = Summary::of(&residuals);
        assert!((s.std - 0.5).abs() < 0.05, "std {}", s.std);
    }

    #[test]
    fn reported_pose_without_noise_or_error_is_truth() {
        let mut w = world();
        w.corrections.clear();
        let s = w.session(0).unwrap().clone();
        let (pose, _) = w.tool_at(3.0);
        let ecm = s.ecm_at(3.0);
        let r = reported_psm_pose(&w, &s, &ecm, &pose, &NoiseSpec::zero(0), &mut stage_rng(0, 0)).unwrap();
        let truth = w.true_ecm_to_psm(&s, &ecm, &pose);
        assert!(r.angle_to(&truth) < 1e-9 && r.distance_to(&truth) < 1e-9);
    }

    #[test]
    fn rotation_noise_has_requested_mean() {
        let mut rng = stage_rng(11, 0);
        let angles: Vec<f64> = (0..1000)
            .map(|_| random_perturbation(1.0, 0.0, &mut rng).unwrap().rotation_angle_deg())
            .collect();
        let mean = Summary::of(&angles).mean;
        assert!((mean - 1.0).abs() < 0.15, "mean {mean}");
        assert!(random_perturbation(0.0, 0.0, &mut rng).is_none());
    }

    #[test]
    fn presets() {
        assert_eq!(NoiseSpec::preset("zero", 4).unwrap(), NoiseSpec::zero(4));
        assert!(NoiseSpec::preset("paper-comparable", 4).unwrap().validate().is_ok());
        assert!(NoiseSpec::preset("loud", 4).is_err());
        assert!(NoiseSpec { outlier_rate: 1.5, ..NoiseSpec::zero(0) }.validate().is_err());
    }
}
