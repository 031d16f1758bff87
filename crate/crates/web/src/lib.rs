//! Browser demo: record a synthetic demonstration in one robot setup and
//! replay it as an overlay in another.

use ghostline_core::calibration::{build_motion_pairs, fit_correction, solve_handeye};
use ghostline_core::camera::{clip_visible, to_ndc, CameraIntrinsics, CameraSide};
use ghostline_core::instrument::{place_components, Component, JointState};
use ghostline_core::pipeline::{
    playback_iter, render_overlay, track_pose_at, CameraSetup, Overlay, Recorder, SessionState, Trajectory,
};
use ghostline_core::registration::register_scene;
use ghostline_core::robust::RobustConfig;
use ghostline_core::simulator::{generate_dataset, run_scenario, Dataset, ScenarioSpec};
use ghostline_core::{Point2, Result, RigidTransform};
use wasm_bindgen::prelude::*;

fn js(e: ghostline_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A recorded demonstration and the playback setup it is replayed in.
#[wasm_bindgen]
pub struct Demo {
    data: Dataset,
    trajectory: Trajectory,
    playback: SessionState,
    intrinsics: CameraIntrinsics,
    summary: String,
}

impl Demo {
    pub fn build(seed: u64, preset: &str, samples: usize) -> Result<Self> {
        let spec = ScenarioSpec { samples, ..ScenarioSpec::with_preset(preset, seed)? };
        let data = generate_dataset(&spec)?;
        let left = CameraSide::Left;
        let k = data.intrinsics[&left];
        let cfg = spec.registration_config();

        let reg_a = register_scene(&data.detections[&left], &data.world.fiducials, &k, &cfg)?;
        let pairs = build_motion_pairs(&data.handeye_camera[..spec.handeye_train], &data.handeye_robot[..spec.handeye_train])?;
        let fit = solve_handeye(&pairs, &RobustConfig::handeye().with_seed(seed))?;
        let hand_eye = fit.transform.inverse();
        let correction = fit_correction(&data.correction_pairs, &RobustConfig::correction().with_seed(seed))?;

        let first = &data.stream[0];
        let state = SessionState::new(first.ecm, CameraSetup { registration: *reg_a.pose(), hand_eye })
            .with_correction(left, &first.instrument, correction.transform);
        let mut recorder = Recorder::new(state);
        for s in &data.stream {
            recorder.record(&s.ecm, &s.psm, s.joints, s.t, &s.instrument)?;
        }
        let trajectory = recorder.finish()?;

        let reg_b = register_scene(&data.playback_detections[&left], &data.world.fiducials, &k, &cfg)?;
        let playback = SessionState::new(data.playback_ecm[0].1, CameraSetup { registration: *reg_b.pose(), hand_eye });

        let h_true = data.world.cameras[&left].hand_eye;
        let summary = format!(
            "registration A: {} markers, {:.2} px rms\nregistration B: {} markers, {:.2} px rms\nhand-eye: {} of {} motions, error {:.2} mm / {:.2} deg\ncorrection: {:.3} mm rms\nsamples: {}",
            reg_a.n_detect,
            reg_a.solution.rms_residual,
            reg_b.n_detect,
            reg_b.solution.rms_residual,
            fit.inlier_count(),
            pairs.len(),
            hand_eye.distance_to(&h_true),
            hand_eye.angle_to(&h_true),
            correction.rms,
            trajectory.samples().len(),
        );
        Ok(Self { data, trajectory, playback, intrinsics: k, summary })
    }

    fn ecm_at(&self, clock: f64) -> Result<RigidTransform> {
        track_pose_at(&self.data.playback_ecm, clock)
    }

    /// Overlay from the estimated chain at `clock` wall-clock seconds.
    pub fn overlay(&self, clock: f64, speed: f64) -> Result<Overlay> {
        let sample = playback_iter(&self.trajectory, speed, clock)?;
        let ecm = self.ecm_at(clock)?;
        let m = &self.data.world.model;
        render_overlay(&sample, &self.playback, &ecm, m, &self.intrinsics, CameraSide::Left)
    }

    /// The same instant rendered from the simulator's ground truth.
    pub fn truth(&self, clock: f64, speed: f64) -> Result<Overlay> {
        let t = playback_iter(&self.trajectory, speed, clock)?.t;
        let w = &self.data.world;
        let view = w.registration(&w.sessions[1], CameraSide::Left, &self.ecm_at(clock)?)?;
        let (pose, joints): (RigidTransform, JointState) = w.tool_at(t);
        let placed = place_components(&pose, &joints, &w.model)?;
        let k = &self.intrinsics;
        let mut out = Overlay::default();
        for (slot, c) in out.components.iter_mut().zip(Component::ALL) {
            let to_camera = view * *placed.get(c);
            for v in w.model.vertices(c) {
                let p = to_camera.transform_point(v);
                if clip_visible(&k.frustum(), &p) {
                    if let Some(n) = to_ndc(&k.render_matrix(), &p) {
                        slot.push(Point2::new(n.x, n.y));
                    }
                }
            }
        }
        Ok(out)
    }

    /// `[n, x1, y1, ..., xn, yn]` per component, in image pixels.
    fn pixels(&self, overlay: &Overlay) -> Vec<f64> {
        let mut out = Vec::new();
        for pts in &overlay.components {
            out.push(pts.len() as f64);
            for p in pts {
                let px = self.intrinsics.ndc_to_pixel(p);
                out.extend([px.x, px.y]);
            }
        }
        out
    }
}

#[wasm_bindgen]
impl Demo {
    /// Generates the synthetic world for `seed` and runs registration,
    /// calibration and recording.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, preset: &str) -> std::result::Result<Demo, JsError> {
        Self::build(seed as u64, preset, 300).map_err(js)
    }

    /// Wall-clock playback length at `speed`, s.
    pub fn duration(&self, speed: f64) -> std::result::Result<f64, JsError> {
        self.trajectory.playback_duration(speed).map_err(js)
    }

    pub fn width(&self) -> f64 {
        self.intrinsics.width
    }

    pub fn height(&self) -> f64 {
        self.intrinsics.height
    }

    /// Estimated overlay at `clock`, flattened as `[n, x, y, ...]` per component.
    pub fn frame(&self, clock: f64, speed: f64) -> std::result::Result<Vec<f64>, JsError> {
        self.overlay(clock, speed).map(|o| self.pixels(&o)).map_err(js)
    }

    /// Ground-truth overlay at `clock`, same layout as `frame`.
    pub fn truth_frame(&self, clock: f64, speed: f64) -> std::result::Result<Vec<f64>, JsError> {
        self.truth(clock, speed).map(|o| self.pixels(&o)).map_err(js)
    }

    pub fn summary(&self) -> String {
        self.summary.clone()
    }
}

/// Full synthetic evaluation for one seed, as `key value` lines.
#[wasm_bindgen]
pub fn evaluate(seed: u32, preset: &str) -> std::result::Result<String, JsError> {
    evaluate_text(seed as u64, preset).map_err(js)
}

pub fn evaluate_text(seed: u64, preset: &str) -> Result<String> {
    let spec = ScenarioSpec { samples: 200, ..ScenarioSpec::with_preset(preset, seed)? };
    Ok(run_scenario(&spec)?.to_text())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_gap(a: &Overlay, b: &Overlay) -> f64 {
        let mut worst = 0.0f64;
        for (x, y) in a.components.iter().zip(&b.components) {
            assert_eq!(x.len(), y.len());
            for (p, q) in x.iter().zip(y) {
                worst = worst.max((p - q).norm());
            }
        }
        worst
    }

    #[test]
    fn noiseless_demo_overlay_matches_truth() {
        let demo = Demo::build(2, "zero", 120).unwrap();
        let d = demo.trajectory.playback_duration(1.0).unwrap();
        for clock in [0.0, 0.3 * d, d] {
            let a = demo.overlay(clock, 1.0).unwrap();
            let b = demo.truth(clock, 1.0).unwrap();
            assert!(a.vertex_count() > 0);
            assert!(max_gap(&a, &b) < 1e-6);
        }
    }

    #[test]
    fn pixel_layout_counts_each_component() {
        let demo = Demo::build(3, "paper-comparable", 60).unwrap();
        let o = demo.overlay(1.0, 2.0).unwrap();
        let flat = demo.pixels(&o);
        assert_eq!(flat.len(), 4 + 2 * o.vertex_count());
        let mut i = 0;
        for pts in &o.components {
            assert_eq!(flat[i] as usize, pts.len());
            i += 1 + 2 * pts.len();
        }
    }

    #[test]
    fn evaluation_text_is_a_report() {
        let text = evaluate_text(4, "zero").unwrap();
        assert!(text.starts_with("#ghostline-report v1\n"));
        assert!(text.contains("\noverlay.cross.left.max_ndc "));
    }
}
