use ghostline_core::camera::CameraSide;
use ghostline_core::pipeline::{view_to_scene, CameraSetup, SessionState};
use ghostline_core::simulator::{
    build_world, evaluate_registration_relative, median, monte_carlo, run_in_world, run_scenario, stage_rng,
    NoiseSpec, ScenarioReport, ScenarioSpec, Stages, WorldTruth,
};
use ghostline_core::RigidTransform;
use nalgebra::Vector3;
use proptest::prelude::*;

fn is_count(key: &str) -> bool {
    key.ends_with(".n") || key.ends_with("detections") || key.ends_with("test_pairs") || key.ends_with("inliers")
}

fn zero(seed: u64) -> ScenarioSpec {
    ScenarioSpec::with_preset("zero", seed).unwrap()
}

#[test]
fn zero_noise_leaves_every_stage_error_below_1e6() {
    for seed in [0, 1, 2] {
        let r = run_scenario(&zero(seed)).unwrap();
        for (k, v) in r.metrics.iter().filter(|(k, _)| !is_count(k)) {
            assert!(v.abs() < 1e-6, "seed {seed}: {k} = {v}");
        }
        assert!(r.get("record.scene.l2_mm.max").unwrap() < 1e-9);
        assert!(r.get("overlay.cross.left.px.n").unwrap() > 1000.0);
    }
}

#[test]
fn fitted_correction_undoes_a_translated_api_error() {
    let spec = zero(5);
    let mut world = build_world(&spec, 5).unwrap();
    let id = world.instrument.clone();
    world.corrections.insert(id, RigidTransform::from_translation(Vector3::new(2.0, 0.0, 0.0)));
    let r = run_in_world(&world, &spec).unwrap();
    assert!(r.get("record.scene.l2_mm.max").unwrap() < 1e-9);
    assert!(r.get("correction.test_mm.mean").unwrap() < 1e-9);
}

#[test]
fn seeded_runs_are_bit_reproducible() {
    let spec = ScenarioSpec::with_preset("paper-comparable", 42).unwrap();
    let a = run_scenario(&spec).unwrap();
    let b = run_scenario(&spec).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.trajectory.to_text(), b.trajectory.to_text());
    assert_ne!(a.to_text(), run_scenario(&spec.reseeded(43)).unwrap().to_text());
}

#[test]
fn monte_carlo_keeps_seed_order() {
    let spec = zero(10);
    let parallel: Vec<String> = monte_carlo(&spec, 4).into_iter().map(|r| r.unwrap().to_text()).collect();
    let serial: Vec<String> = (10..14).map(|s| run_scenario(&spec.reseeded(s)).unwrap().to_text()).collect();
    assert_eq!(parallel, serial);
}

#[test]
fn disabling_a_stage_does_not_shift_other_stages() {
    let spec = ScenarioSpec::with_preset("paper-comparable", 8).unwrap();
    let full = run_scenario(&spec).unwrap();
    let mut reduced = spec.clone();
    reduced.stages.relative_registration = false;
    let part = run_scenario(&reduced).unwrap();
    for (k, v) in &part.metrics {
        assert_eq!(full.metrics[k], *v, "{k}");
    }
    assert!(part.metrics.len() < full.metrics.len());
}

fn end_to_end(sigma: f64, seeds: usize) -> f64 {
    let mut spec = zero(1000);
    spec.noise.pixel_sigma = sigma;
    spec.stages.relative_registration = false;
    spec.stages.playback = false;
    let errors: Vec<f64> = monte_carlo(&spec, seeds)
        .into_iter()
        .map(|r| r.unwrap().get("pose_estimation.l2_mm.mean").unwrap())
        .collect();
    median(&errors)
}

#[test]
fn end_to_end_error_grows_with_pixel_noise() {
    let medians: Vec<f64> = [0.0, 0.25, 0.5, 1.0].iter().map(|s| end_to_end(*s, 100)).collect();
    assert!(medians[0] < 1e-9, "{medians:?}");
    for w in medians.windows(2) {
        assert!(w[0] <= w[1], "{medians:?}");
    }
}

fn composition_run(noise: NoiseSpec) -> ScenarioReport {
    let mut spec = zero(21);
    spec.noise = noise;
    spec.stages.relative_registration = false;
    run_scenario(&spec).unwrap()
}

fn assert_small(r: &ScenarioReport, keys: &[&str]) {
    for k in keys {
        let v = r.get(k).unwrap();
        assert!(v < 1e-6, "{k} = {v}");
    }
}

fn assert_large(r: &ScenarioReport, keys: &[&str]) {
    for k in keys {
        let v = r.get(k).unwrap();
        assert!(v > 1e-3, "{k} = {v}");
    }
}

#[test]
fn a_single_error_source_shows_up_only_downstream_of_its_stage() {
    let base = NoiseSpec::zero(21);

    // corner noise: registration is off, the kinematic stages are not
    let pixel = composition_run(NoiseSpec { pixel_sigma: 0.5, ..base.clone() });
    assert_large(&pixel, &["registration.left.l2_mm", "handeye.left.abs_l2_mm"]);
    assert_small(&pixel, &["correction.train_rms_mm"]);

    // ECM kinematics noise: registrations stay exact
    let ecm = composition_run(NoiseSpec { ecm_rot_deg: 0.5, ecm_trans_mm: 1.0, ..base.clone() });
    assert_small(&ecm, &["registration.left.l2_mm", "registration.left.angle_deg", "playback_registration.left.l2_mm"]);
    assert_large(&ecm, &["handeye.left.abs_l2_mm", "pose_estimation.l2_mm.mean"]);

    // reported PSM noise: registration and hand-eye stay exact
    let psm = composition_run(NoiseSpec { psm_rot_deg: 0.5, psm_trans_mm: 0.3, ..base.clone() });
    assert_small(
        &psm,
        &["registration.left.l2_mm", "handeye.left.abs_l2_mm", "handeye.left.abs_angle_deg", "playback_registration.right.l2_mm"],
    );
    assert_large(&psm, &["correction.test_mm.mean", "record.scene.l2_mm.mean", "pose_estimation.l2_mm.mean"]);

    // mount error only reaches the grasped-marker evaluation
    let mount = composition_run(NoiseSpec { mount_rot_deg: 1.0, mount_trans_mm: 1.0, ..base });
    assert_small(&mount, &["record.scene.l2_mm.max", "overlay.cross.left.px.max"]);
    assert_large(&mount, &["pose_estimation.l2_mm.mean"]);
}

fn motions(n: usize) -> Vec<RigidTransform> {
    (0..n)
        .map(|i| {
            let s = i as f64;
            RigidTransform::from_rotation_vector(Vector3::new(0.02 * s, -0.01 * s, 0.015 * s), Vector3::new(2.0 * s, -s, 0.5 * s))
        })
        .collect()
}

#[test]
fn static_scene_registers_with_zero_relative_error() {
    let spec = zero(3);
    let world = build_world(&spec, 3).unwrap();
    let still = vec![RigidTransform::identity(); 5];
    let r = evaluate_registration_relative(&world, &spec, CameraSide::Left, &still, &mut stage_rng(3, 5)).unwrap();
    assert_eq!(r.samples.len(), 4);
    assert!(r.l2().mean < 1e-9 && r.angle().mean < 1e-9);

    let moved = evaluate_registration_relative(&world, &spec, CameraSide::Left, &motions(6), &mut stage_rng(3, 5)).unwrap();
    assert!(moved.l2().mean < 1e-6 && moved.angle().mean < 1e-6);
}

#[test]
fn relative_error_of_a_pose_ignores_later_poses() {
    let mut spec = zero(4);
    spec.noise.pixel_sigma = 0.7;
    let world = build_world(&spec, 4).unwrap();
    let long = evaluate_registration_relative(&world, &spec, CameraSide::Right, &motions(8), &mut stage_rng(4, 5)).unwrap();
    let mut later = motions(8);
    later.truncate(5);
    later.push(RigidTransform::from_translation(Vector3::new(-9.0, 3.0, 1.0)));
    let short = evaluate_registration_relative(&world, &spec, CameraSide::Right, &later, &mut stage_rng(4, 5)).unwrap();
    assert_eq!(long.samples[..4], short.samples[..4]);
}

fn true_state(world: &WorldTruth, session: usize) -> SessionState {
    let s = &world.sessions[session];
    let e0 = s.initial_ecm();
    let setup = |side| CameraSetup {
        registration: world.registration(s, side, &e0).unwrap(),
        hand_eye: world.cameras[&side].hand_eye,
    };
    SessionState::new(e0, setup(CameraSide::Left)).with_camera(CameraSide::Right, setup(CameraSide::Right))
}

#[test]
fn view_to_scene_tracks_the_true_camera_through_ecm_motion() {
    let world = build_world(&zero(6), 6).unwrap();
    let state = true_state(&world, 0);
    let s = &world.sessions[0];
    for t in [0.0, 7.5, 21.0, 50.0] {
        let ecm = s.ecm_at(t);
        for side in [CameraSide::Left, CameraSide::Right] {
            let k = world.cameras[&side].intrinsics;
            let view = view_to_scene(&state, &ecm, side).unwrap();
            let truth = world.registration(s, side, &ecm).unwrap();
            for (_, corners) in world.fiducials.iter() {
                for c in corners {
                    let a = k.project(&view.transform_point(c)).unwrap();
                    let b = k.project(&truth.transform_point(c)).unwrap();
                    assert!((a - b).norm() < 1e-9);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Moving the ECM base (setup joints) between record and playback, with the
    /// ECM re-posed to look at the scene again, leaves the overlay unchanged.
    #[test]
    fn playback_is_independent_of_setup_joints(
        w in prop::array::uniform3(-3.0f64..3.0),
        t in prop::array::uniform3(-800.0f64..800.0),
        seed in 0u64..1000,
    ) {
        let mut spec = zero(seed);
        spec.samples = 60;
        spec.stages = Stages { handeye: false, correction: false, relative_registration: false, playback: true };
        let mut world = build_world(&spec, seed).unwrap();
        let old = world.sessions[1].world_to_base;
        let new = RigidTransform::from_rotation_vector(Vector3::from(w), Vector3::from(t));
        let b = &mut world.sessions[1];
        b.world_to_base = new;
        for (_, e) in b.ecm.iter_mut() {
            *e = new.inverse() * old * *e;
        }
        let r = run_in_world(&world, &spec).unwrap();
        prop_assert!(r.get("overlay.cross.left.max_ndc").unwrap() < 1e-6);
        prop_assert!(r.get("overlay.cross.right.max_ndc").unwrap() < 1e-6);
    }
}
