//! Record and playback transform chains.
//!
//! Symbols: `R_c = ᶜ'ⁱT_s` (registration of camera `c` at the initial ECM
//! pose), `H_c = ᵉᶜᵐT_c` (hand-eye), `M = ᵉᶜᵐ'ⁱT_ecm` (ECM motion since
//! registration), `T_cor` (API correction in the initial left-camera frame).
//!
//! * record: `ˢT_psm = R_lc⁻¹ · T_cor · H_lc⁻¹ · M · ᵉᶜᵐT_psm`
//! * view:   `ᶜT_s = H_c⁻¹ · M⁻¹ · H_c · R_c`
//! * render: `p_rend = render · ᶜT_s · ˢT_loc · p_loc`

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::camera::{clip_visible, to_ndc, CameraIntrinsics, CameraSide};
use crate::error::{Error, Result};
use crate::formats::{parse_f64, parse_floats, parse_pose, pose_string, records, write_floats};
use crate::geometry::{Point2, RigidTransform};
use crate::instrument::{place_components, Component, InstrumentModel, JointState};

/// Registration and hand-eye of one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSetup {
    /// `ᶜ'ⁱT_s`: scene into the camera frame at the initial ECM pose.
    pub registration: RigidTransform,
    /// `ᵉᶜᵐT_c`: camera frame into the ECM frame.
    pub hand_eye: RigidTransform,
}

/// Everything fixed at registration time in one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    /// `ᵇᵃˢᵉT_ecm,i`, the ECM pose at registration.
    pub initial_ecm: RigidTransform,
    pub cameras: BTreeMap<CameraSide, CameraSetup>,
    /// `T_cor` per (camera, instrument); a missing entry means identity.
    pub corrections: BTreeMap<(CameraSide, String), RigidTransform>,
    /// Time of registration, s. Samples must not precede it.
    pub registered_at: f64,
}

impl SessionState {
    pub fn new(initial_ecm: RigidTransform, left: CameraSetup) -> Self {
        Self {
            initial_ecm,
            cameras: BTreeMap::from([(CameraSide::Left, left)]),
            corrections: BTreeMap::new(),
            registered_at: 0.0,
        }
    }

    pub fn with_camera(mut self, side: CameraSide, setup: CameraSetup) -> Self {
        self.cameras.insert(side, setup);
        self
    }

    pub fn with_correction(mut self, side: CameraSide, instrument: &str, t_cor: RigidTransform) -> Self {
        self.corrections.insert((side, instrument.to_string()), t_cor);
        self
    }

    pub fn camera(&self, side: CameraSide) -> Result<&CameraSetup> {
        self.cameras
            .get(&side)
            .ok_or_else(|| Error::Validation(format!("{} camera is not registered", side.name())))
    }

    pub fn correction(&self, side: CameraSide, instrument: &str) -> RigidTransform {
        self.corrections
            .get(&(side, instrument.to_string()))
            .copied()
            .unwrap_or_else(RigidTransform::identity)
    }
}

/// One recorded instant: end-effector pose in the scene frame plus wrist joints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    /// s
    pub t: f64,
    /// `ˢT_psm`
    pub pose: RigidTransform,
    pub joints: JointState,
    pub instrument: String,
}

/// `ᵉᶜᵐ'ⁱT_ecm = ᵇᵃˢᵉT_ecm,i⁻¹ · ᵇᵃˢᵉT_ecm`.
pub fn ecm_motion(state: &SessionState, current_ecm: &RigidTransform) -> RigidTransform {
    state.initial_ecm.inverse() * *current_ecm
}

/// Applies the recording chain to one API-reported pose (`ᵉᶜᵐT_psm`).
pub fn record_sample(
    state: &SessionState,
    current_ecm: &RigidTransform,
    reported_psm: &RigidTransform,
    joints: JointState,
    t: f64,
    instrument: &str,
) -> Result<TrajectorySample> {
    if !t.is_finite() || t < state.registered_at {
        return Err(Error::Validation(format!(
            "sample time {t} s precedes registration at {} s",
            state.registered_at
        )));
    }
    check_instrument_id(instrument)?;
    let left = state.camera(CameraSide::Left)?;
    let pose = left.registration.inverse()
        * state.correction(CameraSide::Left, instrument)
        * left.hand_eye.inverse()
        * ecm_motion(state, current_ecm)
        * *reported_psm;
    Ok(TrajectorySample {
        t,
        pose,
        joints,
        instrument: instrument.to_string(),
    })
}

fn check_instrument_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '#') {
        return Err(Error::Validation(format!("instrument id `{id}` must be a non-empty token without whitespace or `#`")));
    }
    Ok(())
}

/// Appends samples with strictly increasing timestamps.
#[derive(Debug, Clone)]
pub struct Recorder {
    state: SessionState,
    samples: Vec<TrajectorySample>,
}

impl Recorder {
    pub fn new(state: SessionState) -> Self {
        Self {
            state,
            samples: Vec::new(),
        }
    }

    pub fn record(
        &mut self,
        current_ecm: &RigidTransform,
        reported_psm: &RigidTransform,
        joints: JointState,
        t: f64,
        instrument: &str,
    ) -> Result<&TrajectorySample> {
        if let Some(last) = self.samples.last() {
            if !(t > last.t) {
                return Err(Error::Validation(format!(
                    "timestamp {t} s is not after the previous sample at {} s",
                    last.t
                )));
            }
        }
        let s = record_sample(&self.state, current_ecm, reported_psm, joints, t, instrument)?;
        self.samples.push(s);
        Ok(self.samples.last().expect("just pushed"))
    }

    pub fn finish(self) -> Result<Trajectory> {
        Trajectory::new(self.state, self.samples)
    }
}

/// `ᶜT_s` for the current ECM pose.
pub fn view_to_scene(state: &SessionState, current_ecm: &RigidTransform, camera: CameraSide) -> Result<RigidTransform> {
    let c = state.camera(camera)?;
    let m = ecm_motion(state, current_ecm);
    Ok(c.hand_eye.inverse() * m.inverse() * c.hand_eye * c.registration)
}

/// Normalized image coordinates of the visible vertices of each component.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Overlay {
    pub components: [Vec<Point2>; 4],
}

impl Overlay {
    pub fn get(&self, c: Component) -> &[Point2] {
        &self.components[Component::ALL.iter().position(|x| *x == c).expect("known component")]
    }

    pub fn vertex_count(&self) -> usize {
        self.components.iter().map(Vec::len).sum()
    }
}

/// Places the components from a recorded sample and projects them into the
/// chosen camera, dropping vertices outside the view frustum.
pub fn render_overlay(
    sample: &TrajectorySample,
    state: &SessionState,
    current_ecm: &RigidTransform,
    m: &InstrumentModel,
    k: &CameraIntrinsics,
    camera: CameraSide,
) -> Result<Overlay> {
    let view = view_to_scene(state, current_ecm, camera)?;
    let poses = place_components(&sample.pose, &sample.joints, m)?;
    let render = k.render_matrix();
    let frustum = k.frustum();
    let mut overlay = Overlay::default();
    for (slot, c) in overlay.components.iter_mut().zip(Component::ALL) {
        let to_camera = view * *poses.get(c);
        for v in m.vertices(c) {
            let p = to_camera.transform_point(v);
            if !clip_visible(&frustum, &p) {
                continue;
            }
            if let Some(ndc) = to_ndc(&render, &p) {
                slot.push(Point2::new(ndc.x, ndc.y));
            }
        }
    }
    Ok(overlay)
}

/// A recorded demonstration together with the session it was recorded in.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub session: SessionState,
    /// Free-form `key value` metadata carried through the file.
    pub meta: BTreeMap<String, String>,
    samples: Vec<TrajectorySample>,
}

pub const TRAJECTORY_HEADER: &str = "#ghostline-trajectory v1";
const COLUMNS: &str = "#columns t qw qx qy qz tx ty tz q6 q7 thetaJ instrument_id";

impl Trajectory {
    pub fn new(session: SessionState, samples: Vec<TrajectorySample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("trajectory has no samples".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Validation(format!(
                    "timestamps must increase: {} s then {} s",
                    w[0].t, w[1].t
                )));
            }
        }
        for s in &samples {
            check_instrument_id(&s.instrument)?;
        }
        Ok(Self {
            session,
            meta: BTreeMap::new(),
            samples,
        })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Wall-clock length of a playback at `speed`.
    pub fn playback_duration(&self, speed: f64) -> Result<f64> {
        check_speed(speed)?;
        Ok((self.end() - self.start()) / speed)
    }

    /// Text form: `#` header lines, then one sample per line.
    ///
    /// ```text
    /// #ghostline-trajectory v1
    /// #meta registered_at <s>
    /// #meta <key> <value>
    /// #pose initial_ecm <qw qx qy qz tx ty tz>
    /// #pose registration.left <7>
    /// #pose hand_eye.left <7>
    /// #correction left <instrument_id> <7>
    /// #columns t qw qx qy qz tx ty tz q6 q7 thetaJ instrument_id
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TRAJECTORY_HEADER}");
        let _ = writeln!(out, "#meta registered_at {}", self.session.registered_at);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "#meta {k} {v}");
        }
        let _ = writeln!(out, "#pose initial_ecm {}", pose_string(&self.session.initial_ecm));
        for (side, c) in &self.session.cameras {
            let _ = writeln!(out, "#pose registration.{} {}", side.name(), pose_string(&c.registration));
            let _ = writeln!(out, "#pose hand_eye.{} {}", side.name(), pose_string(&c.hand_eye));
        }
        for ((side, id), t) in &self.session.corrections {
            let _ = writeln!(out, "#correction {} {id} {}", side.name(), pose_string(t));
        }
        let _ = writeln!(out, "{COLUMNS}");
        for s in &self.samples {
            let mut values = vec![s.t];
            values.extend(s.pose.to_array7());
            values.extend([s.joints.q6, s.joints.q7, s.joints.theta_j]);
            write_floats(&mut out, &values);
            let _ = writeln!(out, " {}", s.instrument);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == TRAJECTORY_HEADER => {}
            _ => return Err(Error::parse(1, format!("expected `{TRAJECTORY_HEADER}`"))),
        }
        let mut meta = BTreeMap::new();
        let mut registered_at = None;
        let mut initial_ecm = None;
        let mut registrations = BTreeMap::new();
        let mut hand_eyes = BTreeMap::new();
        let mut corrections = BTreeMap::new();
        let mut samples = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            if let Some(header) = raw.strip_prefix('#') {
                let tokens: Vec<&str> = header.split_whitespace().collect();
                match tokens.first().copied() {
                    Some("meta") if tokens.len() == 3 && tokens[1] == "registered_at" => {
                        registered_at = Some(parse_f64(tokens[2], line)?);
                    }
                    Some("meta") if tokens.len() == 3 => {
                        meta.insert(tokens[1].to_string(), tokens[2].to_string());
                    }
                    Some("pose") if tokens.len() == 9 => {
                        let pose = parse_pose(&tokens[2..], line)?;
                        match tokens[1].split_once('.') {
                            None if tokens[1] == "initial_ecm" => initial_ecm = Some(pose),
                            Some(("registration", side)) => {
                                registrations.insert(side.parse::<CameraSide>().map_err(|e| Error::parse(line, e.to_string()))?, pose);
                            }
                            Some(("hand_eye", side)) => {
                                hand_eyes.insert(side.parse::<CameraSide>().map_err(|e| Error::parse(line, e.to_string()))?, pose);
                            }
                            _ => return Err(Error::parse(line, format!("unknown pose `{}`", tokens[1]))),
                        }
                    }
                    Some("correction") if tokens.len() == 10 => {
                        let side: CameraSide = tokens[1].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
                        corrections.insert((side, tokens[2].to_string()), parse_pose(&tokens[3..], line)?);
                    }
                    Some("columns") if raw.trim_end() == COLUMNS => {}
                    Some(_) => return Err(Error::parse(line, format!("unrecognised header `{raw}`"))),
                    None => {}
                }
                continue;
            }
            let tokens: Vec<&str> = raw.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            if tokens.len() != 12 {
                return Err(Error::parse(line, format!("expected 12 fields, found {}", tokens.len())));
            }
            let v = parse_floats::<11>(&tokens[..11], line)?;
            samples.push(TrajectorySample {
                t: v[0],
                pose: parse_pose(&tokens[1..8], line)?,
                joints: JointState::new(v[8], v[9], v[10]),
                instrument: tokens[11].to_string(),
            });
        }
        let initial_ecm = initial_ecm.ok_or_else(|| Error::parse(0, "missing `#pose initial_ecm`"))?;
        let mut cameras = BTreeMap::new();
        for (side, registration) in registrations {
            let hand_eye = hand_eyes
                .remove(&side)
                .ok_or_else(|| Error::parse(0, format!("missing hand-eye for {} camera", side.name())))?;
            cameras.insert(side, CameraSetup { registration, hand_eye });
        }
        if !hand_eyes.is_empty() {
            return Err(Error::parse(0, "hand-eye given for an unregistered camera"));
        }
        let session = SessionState {
            initial_ecm,
            cameras,
            corrections,
            registered_at: registered_at.ok_or_else(|| Error::parse(0, "missing `#meta registered_at`"))?,
        };
        let mut traj = Trajectory::new(session, samples).map_err(|e| Error::parse(0, e.to_string()))?;
        traj.meta = meta;
        Ok(traj)
    }
}

/// One line of robot kinematics as logged during a demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsSample {
    pub t: f64,
    /// `ᵇᵃˢᵉT_ecm`
    pub ecm: RigidTransform,
    /// API-reported `ᵉᶜᵐT_psm`
    pub psm: RigidTransform,
    pub joints: JointState,
    pub instrument: String,
}

/// Kinematics stream: `t <ecm 7> <psm 7> q6 q7 thetaJ instrument_id` per
/// line, strictly increasing `t`.
pub fn parse_kinematics(text: &str) -> Result<Vec<KinematicsSample>> {
    let mut out: Vec<KinematicsSample> = Vec::new();
    for (line, tokens) in records(text) {
        if tokens.len() != 19 {
            return Err(Error::parse(line, format!("expected 19 fields, found {}", tokens.len())));
        }
        let [q6, q7, theta_j] = parse_floats::<3>(&tokens[15..18], line)?;
        let sample = KinematicsSample {
            t: parse_f64(tokens[0], line)?,
            ecm: parse_pose(&tokens[1..8], line)?,
            psm: parse_pose(&tokens[8..15], line)?,
            joints: JointState::new(q6, q7, theta_j),
            instrument: tokens[18].to_string(),
        };
        if out.last().is_some_and(|p| p.t >= sample.t) {
            return Err(Error::parse(line, "timestamps must increase strictly"));
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_kinematics(samples: &[KinematicsSample]) -> String {
    let mut out = String::from("# t ecm(qw qx qy qz tx ty tz) psm(qw qx qy qz tx ty tz) q6 q7 thetaJ instrument_id\n");
    for s in samples {
        let mut values = vec![s.t];
        values.extend(s.ecm.to_array7());
        values.extend(s.psm.to_array7());
        values.extend([s.joints.q6, s.joints.q7, s.joints.theta_j]);
        write_floats(&mut out, &values);
        let _ = writeln!(out, " {}", s.instrument);
    }
    out
}

/// Timed pose track: `t qw qx qy qz tx ty tz` per line, strictly increasing `t`.
pub fn parse_pose_track(text: &str) -> Result<Vec<(f64, RigidTransform)>> {
    let mut out: Vec<(f64, RigidTransform)> = Vec::new();
    for (line, tokens) in records(text) {
        if tokens.len() != 8 {
            return Err(Error::parse(line, format!("expected 8 fields, found {}", tokens.len())));
        }
        let t = parse_f64(tokens[0], line)?;
        if out.last().is_some_and(|(p, _)| *p >= t) {
            return Err(Error::parse(line, "timestamps must increase strictly"));
        }
        out.push((t, parse_pose(&tokens[1..], line)?));
    }
    Ok(out)
}

pub fn write_pose_track(track: &[(f64, RigidTransform)]) -> String {
    let mut out = String::from("# t qw qx qy qz tx ty tz\n");
    for (t, p) in track {
        let _ = writeln!(out, "{t} {}", pose_string(p));
    }
    out
}

/// Pose on a track at `t`, interpolated between neighbours and held at the ends.
pub fn track_pose_at(track: &[(f64, RigidTransform)], t: f64) -> Result<RigidTransform> {
    let (first, last) = match (track.first(), track.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::InsufficientData("empty pose track".into())),
    };
    if t <= first.0 {
        return Ok(first.1);
    }
    if t >= last.0 {
        return Ok(last.1);
    }
    let after = track.partition_point(|(kt, _)| *kt <= t);
    let (t0, a) = &track[after - 1];
    if t == *t0 {
        return Ok(*a);
    }
    let (t1, b) = &track[after];
    Ok(a.interpolate(b, (t - t0) / (t1 - t0)))
}

/// Overlay stream written during playback.
///
/// ```text
/// #ghostline-overlay v1
/// #meta <key> <value>
/// <clock> <t> <component> <n> x1 y1 ... xn yn
/// ```
/// Coordinates are NDC; `clock` is wall-clock playback time and `t` the
/// trajectory time it shows.
pub fn write_overlay_stream(meta: &BTreeMap<String, String>, frames: &[(f64, f64, Overlay)]) -> String {
    let mut out = String::from("#ghostline-overlay v1\n");
    for (k, v) in meta {
        let _ = writeln!(out, "#meta {k} {v}");
    }
    for (clock, t, overlay) in frames {
        for c in Component::ALL {
            let points = overlay.get(c);
            let _ = write!(out, "{clock} {t} {} {}", c.name(), points.len());
            for p in points {
                let _ = write!(out, " {} {}", p.x, p.y);
            }
            out.push('\n');
        }
    }
    out
}

fn check_speed(speed: f64) -> Result<()> {
    if speed > 0.0 && speed.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("playback speed must be positive, got {speed}")))
    }
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

/// The trajectory state `clock` wall-clock seconds into a playback at
/// `speed`: slerp on rotation, linear on translation and joints, clamped at
/// both ends. The returned sample carries the trajectory time.
pub fn playback_iter(traj: &Trajectory, speed: f64, clock: f64) -> Result<TrajectorySample> {
    check_speed(speed)?;
    if !(clock >= 0.0) {
        return Err(Error::Validation(format!("playback clock must be non-negative, got {clock}")));
    }
    let samples = traj.samples();
    let t = (traj.start() + clock * speed).min(traj.end());
    let after = samples.partition_point(|s| s.t <= t);
    if after == 0 {
        return Ok(samples[0].clone());
    }
    let a = &samples[after - 1];
    if a.t == t || after == samples.len() {
        return Ok(a.clone());
    }
    let b = &samples[after];
    let s = (t - a.t) / (b.t - a.t);
    Ok(TrajectorySample {
        t,
        pose: a.pose.interpolate(&b.pose, s),
        joints: JointState::new(
            lerp(a.joints.q6, b.joints.q6, s),
            lerp(a.joints.q7, b.joints.q7, s),
            lerp(a.joints.theta_j, b.joints.theta_j, s),
        ),
        instrument: a.instrument.clone(),
    })
}

/// Fixed-rate playback frames as `(wall-clock s, sample)`, ending with the
/// last sample.
pub fn playback_frames(traj: &Trajectory, speed: f64, fps: f64) -> Result<Vec<(f64, TrajectorySample)>> {
    let duration = traj.playback_duration(speed)?;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::Validation(format!("frame rate must be positive, got {fps}")));
    }
    let frames = (duration * fps).floor() as usize;
    let mut out = Vec::with_capacity(frames + 2);
    for i in 0..=frames {
        let clock = i as f64 / fps;
        out.push((clock, playback_iter(traj, speed, clock)?));
    }
    if out.last().map(|(c, _)| *c < duration).unwrap_or(true) {
        out.push((duration, playback_iter(traj, speed, duration)?));
    }
    Ok(out)
}
