//! Robust perspective-n-point: P3P minimal solver inside RANSAC, then
//! Levenberg-Marquardt on the reprojection error of the consensus set.

use nalgebra::{Matrix6, Vector3, Vector6};
use rand::seq::index::sample;

use crate::calibration::rigid_fit;
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::geometry::{skew, Point2, Point3, RigidTransform};
use crate::robust::{better, RobustConfig};

/// A scene-to-camera pose with its consensus report.
#[derive(Debug, Clone, PartialEq)]
pub struct PnpSolution {
    /// Maps scene points into the camera frame.
    pub pose: RigidTransform,
    pub inliers: Vec<bool>,
    /// Reprojection error per correspondence, px.
    pub residuals: Vec<f64>,
    /// RMS reprojection error over the inliers, px.
    pub rms_residual: f64,
}

impl PnpSolution {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Real roots of `c[0] + c[1] x + ... + c[4] x^4`.
fn quartic_real_roots(c: [f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let c: Vec<f64> = c.iter().map(|v| v / scale).collect();
    let degree = (0..5).rev().find(|&d| c[d].abs() > 1e-12).unwrap_or(0);
    if degree == 0 {
        return Vec::new();
    }
    let mut companion = nalgebra::DMatrix::<f64>::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -c[i] / c[degree];
    }
    let eval = |x: f64| c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci);
    let deriv = |x: f64| {
        (1..5).rev().fold(0.0, |acc, i| acc * x + i as f64 * c[i])
    };
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let d = deriv(x);
                if d == 0.0 {
                    break;
                }
                let step = eval(x) / d;
                x -= step;
                if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add_scaled(acc: &mut [f64], p: &[f64], s: f64) {
    for (a, v) in acc.iter_mut().zip(p) {
        *a += s * v;
    }
}

/// Newton steps on the three law-of-cosines constraints, recovering the
/// precision lost when the quartic has nearly repeated roots.
fn polish_depths(mut s: [f64; 3], sides2: [f64; 3], cosines: [f64; 3]) -> [f64; 3] {
    // (i, j, squared distance, cosine) for each point pair
    let pairs = [(1, 2, sides2[0], cosines[0]), (0, 2, sides2[1], cosines[1]), (0, 1, sides2[2], cosines[2])];
    for _ in 0..5 {
        let mut jac = nalgebra::Matrix3::<f64>::zeros();
        let mut f = Vector3::<f64>::zeros();
        for (row, &(i, j, d2, c)) in pairs.iter().enumerate() {
            f[row] = s[i] * s[i] + s[j] * s[j] - 2.0 * s[i] * s[j] * c - d2;
            jac[(row, i)] = 2.0 * s[i] - 2.0 * s[j] * c;
            jac[(row, j)] = 2.0 * s[j] - 2.0 * s[i] * c;
        }
        let Some(step) = jac.lu().solve(&f) else {
            break;
        };
        let next = [s[0] - step[0], s[1] - step[1], s[2] - step[2]];
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        s = next;
        if step.norm() <= 1e-15 * (s[0] + s[1] + s[2]) {
            break;
        }
    }
    s
}

/// Grunert-style P3P: every pose that maps the three scene points onto the
/// three unit bearing vectors. Up to four solutions.
pub fn p3p(scene: &[Point3; 3], bearings: &[Vector3<f64>; 3]) -> Vec<RigidTransform> {
    let a2 = (scene[1] - scene[2]).norm_squared();
    let b2 = (scene[0] - scene[2]).norm_squared();
    let c2 = (scene[0] - scene[1]).norm_squared();
    if a2 == 0.0 || b2 == 0.0 || c2 == 0.0 {
        return Vec::new();
    }
    let cos_alpha = bearings[1].dot(&bearings[2]);
    let cos_beta = bearings[0].dot(&bearings[2]);
    let cos_gamma = bearings[0].dot(&bearings[1]);

    // With s2 = u·s1 and s3 = v·s1, eliminating u leaves a quartic in v:
    // D² + N² − 2cosγ·N·D − (c²/b²)·Q·D² = 0.
    let k = (a2 - c2) / b2;
    let q = [1.0, -2.0 * cos_beta, 1.0];
    let n = [1.0 + k, -2.0 * k * cos_beta, k - 1.0];
    let d = [2.0 * cos_gamma, -2.0 * cos_alpha];
    let d2 = poly_mul(&d, &d);
    let mut poly = vec![0.0; 5];
    poly_add_scaled(&mut poly, &d2, 1.0);
    poly_add_scaled(&mut poly, &poly_mul(&n, &n), 1.0);
    poly_add_scaled(&mut poly, &poly_mul(&n, &d), -2.0 * cos_gamma);
    poly_add_scaled(&mut poly, &poly_mul(&q, &d2), -c2 / b2);

    let mut solutions = Vec::new();
    for v in quartic_real_roots([poly[0], poly[1], poly[2], poly[3], poly[4]]) {
        let dv = d[0] + d[1] * v;
        let qv = q[0] + q[1] * v + q[2] * v * v;
        if dv.abs() < 1e-12 || qv <= 0.0 {
            continue;
        }
        let u = (n[0] + n[1] * v + n[2] * v * v) / dv;
        let s1 = (b2 / qv).sqrt();
        let depths = polish_depths([s1, u * s1, v * s1], [a2, b2, c2], [cos_alpha, cos_beta, cos_gamma]);
        if depths.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            continue;
        }
        let camera: Vec<Point3> = depths
            .iter()
            .zip(bearings)
            .map(|(s, j)| Point3::from(j * *s))
            .collect();
        if let Ok(pose) = rigid_fit(scene, &camera) {
            solutions.push(pose);
        }
    }
    solutions
}

fn reprojection_error(k: &CameraIntrinsics, pose: &RigidTransform, scene: &Point3, image: &Point2) -> f64 {
    let p = pose.transform_point(scene);
    match k.project(&p) {
        Ok(px) => (px - image).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Levenberg-Marquardt on pixel reprojection error over the selected points,
/// using a left-multiplied `(rotation vector, translation)` update.
pub(crate) fn refine_pose(
    k: &CameraIntrinsics,
    mut pose: RigidTransform,
    scene: &[Point3],
    image: &[Point2],
) -> RigidTransform {
    let cost_of = |pose: &RigidTransform| -> f64 {
        scene
            .iter()
            .zip(image)
            .map(|(s, i)| {
                let p = pose.transform_point(s);
                match k.project(&p) {
                    Ok(px) => (px - i).norm_squared(),
                    Err(_) => 1e12,
                }
            })
            .sum()
    };
    let mut cost = cost_of(&pose);
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (s, obs) in scene.iter().zip(image) {
            let pc = pose.transform_point(s);
            if pc.z <= 0.0 {
                continue;
            }
            let (x, y) = (pc.x / pc.z, pc.y / pc.z);
            let (xd, yd) = k.distort(x, y);
            let r = [k.fx * xd + k.cx - obs.x, k.fy * yd + k.cy - obs.y];
            let jd = k.distort_jacobian(x, y);
            let inv_z = 1.0 / pc.z;
            // d(x, y)/d(point)
            let dn = [[inv_z, 0.0, -x * inv_z], [0.0, inv_z, -y * inv_z]];
            // d(point)/d(update): [ -skew(p) | I ]
            let dp_dw = -skew(&pc.coords);
            for row in 0..2 {
                let f = if row == 0 { k.fx } else { k.fy };
                let mut dpix = Vector3::zeros();
                for c in 0..3 {
                    dpix[c] = f * (jd[row][0] * dn[0][c] + jd[row][1] * dn[1][c]);
                }
                let mut j = Vector6::zeros();
                j.fixed_rows_mut::<3>(0).copy_from(&(dp_dw.transpose() * dpix));
                j.fixed_rows_mut::<3>(3).copy_from(&dpix);
                jtj += j * j.transpose();
                jtr += j * r[row];
            }
        }

        let mut accepted = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let update = RigidTransform::from_rotation_vector(
                delta.fixed_rows::<3>(0).into(),
                delta.fixed_rows::<3>(3).into(),
            );
            let candidate = update * pose;
            let new_cost = cost_of(&candidate);
            if new_cost <= cost {
                let converged = delta.norm() < 1e-13 * (1.0 + pose.translation().norm())
                    || cost - new_cost <= 1e-16 * cost.max(1e-300);
                pose = candidate;
                cost = new_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if converged {
                    return pose;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || cost == 0.0 {
            break;
        }
    }
    pose
}

/// Rejects scene sets with no extent in at least two directions.
pub(crate) fn check_not_collinear(scene: &[Point3]) -> Result<()> {
    if scene.is_empty() {
        return Err(Error::InsufficientData("no correspondences".into()));
    }
    let centroid = scene.iter().map(|p| p.coords).sum::<Vector3<f64>>() / scene.len() as f64;
    let mut spread = nalgebra::Matrix3::zeros();
    for p in scene {
        let d = p.coords - centroid;
        spread += d * d.transpose();
    }
    let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if ev[0] == 0.0 || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate("scene points are collinear or coincident".into()));
    }
    Ok(())
}

fn sample_is_usable(pts: &[Point3; 3]) -> bool {
    let e1 = pts[1] - pts[0];
    let e2 = pts[2] - pts[0];
    let scale = e1.norm_squared().max(e2.norm_squared());
    scale > 0.0 && e1.cross(&e2).norm() > 1e-6 * scale
}

/// Minimum number of correspondences accepted by the robust solver.
pub const MIN_CORRESPONDENCES: usize = 6;

/// RANSAC over P3P samples followed by LM refinement on the inliers.
pub fn solve_pnp(
    image: &[Point2],
    scene: &[Point3],
    k: &CameraIntrinsics,
    cfg: &RobustConfig,
) -> Result<PnpSolution> {
    if image.len() != scene.len() {
        return Err(Error::Validation("image and scene point lists differ in length".into()));
    }
    if image.len() < MIN_CORRESPONDENCES {
        return Err(Error::InsufficientData(format!(
            "PnP needs at least {MIN_CORRESPONDENCES} correspondences, got {}",
            image.len()
        )));
    }
    k.validate()?;
    check_not_collinear(scene)?;

    let bearings: Vec<Vector3<f64>> = image
        .iter()
        .map(|px| {
            let n = k.pixel_to_normalized(px);
            Vector3::new(n.x, n.y, 1.0).normalize()
        })
        .collect();

    let n = image.len();
    let threshold = cfg.inlier_threshold;
    let score = |pose: &RigidTransform| -> (usize, f64) {
        scene.iter().zip(image).fold((0, 0.0), |(count, cost), (s, i)| {
            let e = reprojection_error(k, pose, s, i);
            if e <= threshold {
                (count + 1, cost + e * e)
            } else {
                (count, cost + threshold * threshold)
            }
        })
    };

    let mut rng = cfg.rng();
    let mut best: Option<(RigidTransform, usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut iteration = 0;
    while iteration < needed.min(cfg.max_iterations) {
        iteration += 1;
        let idx = sample(&mut rng, n, 3);
        let pts = [scene[idx.index(0)], scene[idx.index(1)], scene[idx.index(2)]];
        if !sample_is_usable(&pts) {
            continue;
        }
        let rays = [bearings[idx.index(0)], bearings[idx.index(1)], bearings[idx.index(2)]];
        for pose in p3p(&pts, &rays) {
            let (count, cost) = score(&pose);
            if better(count, cost, best.as_ref().map(|b| (b.1, b.2))) {
                best = Some((pose, count, cost));
                needed = cfg.required_iterations(count as f64 / n as f64, 3);
            }
        }
    }

    let Some((mut pose, count, _)) = best else {
        return Err(Error::Degenerate("no usable minimal sample".into()));
    };
    if count < 4 {
        return Err(Error::NoConsensus {
            inliers: count,
            needed: 4,
        });
    }

    let mut mask: Vec<bool> = scene
        .iter()
        .zip(image)
        .map(|(s, i)| reprojection_error(k, &pose, s, i) <= threshold)
        .collect();
    for _ in 0..5 {
        let (s, i): (Vec<Point3>, Vec<Point2>) = scene
            .iter()
            .zip(image)
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((s, i), _)| (*s, *i))
            .unzip();
        pose = refine_pose(k, pose, &s, &i);
        let new_mask: Vec<bool> = scene
            .iter()
            .zip(image)
            .map(|(s, i)| reprojection_error(k, &pose, s, i) <= threshold)
            .collect();
        if new_mask == mask || new_mask.iter().filter(|&&m| m).count() < 4 {
            break;
        }
        mask = new_mask;
    }

    let residuals: Vec<f64> = scene
        .iter()
        .zip(image)
        .map(|(s, i)| reprojection_error(k, &pose, s, i))
        .collect();
    let inliers: Vec<bool> = residuals.iter().map(|&r| r <= threshold).collect();
    let (sum, m) = residuals
        .iter()
        .zip(&inliers)
        .filter(|(_, &b)| b)
        .fold((0.0, 0usize), |(s, m), (r, _)| (s + r * r, m + 1));
    Ok(PnpSolution {
        pose,
        inliers,
        residuals,
        rms_residual: if m == 0 { 0.0 } else { (sum / m as f64).sqrt() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(1000.0, 1000.0, 320.0, 240.0, 640.0, 480.0).with_clip(1.0, 1000.0)
    }

    fn pose() -> RigidTransform {
        RigidTransform::from_rotation_vector(Vector3::new(0.3, -0.4, 0.1), Vector3::new(-10.0, 5.0, 200.0))
    }

    fn scene_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(-20.0..20.0)))
            .collect()
    }

    #[test]
    fn quartic_roots_of_known_polynomial() {
        // (x-1)(x+2)(x-3)(x^2+1)/(x^2+1) → (x-1)(x+2)(x-3)(x-0.5)
        let p1 = poly_mul(&[-1.0, 1.0], &[2.0, 1.0]);
        let p2 = poly_mul(&[-3.0, 1.0], &[-0.5, 1.0]);
        let p = poly_mul(&p1, &p2);
        let mut roots = quartic_real_roots([p[0], p[1], p[2], p[3], p[4]]);
        roots.sort_by(|a, b| a.total_cmp(b));
        let expected = [-2.0, 0.5, 1.0, 3.0];
        assert_eq!(roots.len(), 4);
        for (r, e) in roots.iter().zip(expected) {
            assert!((r - e).abs() < 1e-12);
        }
        // x^2 + 1 has no real roots
        assert!(quartic_real_roots([1.0, 0.0, 1.0, 0.0, 0.0]).is_empty());
    }

    #[test]
    fn p3p_contains_true_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let pts = scene_points(&mut rng, 3);
            let truth = RigidTransform::from_rotation_vector(
                Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
                Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(100.0..300.0)),
            );
            let scene = [pts[0], pts[1], pts[2]];
            if !sample_is_usable(&scene) {
                continue;
            }
            let rays = scene.map(|p| truth.transform_point(&p).coords.normalize());
            let sols = p3p(&scene, &rays);
            let best = sols
                .iter()
                .map(|s| s.distance_to(&truth) + s.angle_to(&truth))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "closest P3P solution off by {best}");
        }
    }

    #[test]
    fn noiseless_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = camera().with_distortion(-0.1, 0.01, 0.0, 0.0, 0.0);
        let scene = scene_points(&mut rng, 24);
        let image: Vec<Point2> = scene.iter().map(|p| k.project(&pose().transform_point(p)).unwrap()).collect();
        let sol = solve_pnp(&image, &scene, &k, &RobustConfig::pnp()).unwrap();
        assert!(sol.pose.distance_to(&pose()) < 1e-6);
        assert!(sol.pose.angle_to(&pose()) < 1e-6);
        assert!(sol.rms_residual < 1e-6);
        assert_eq!(sol.inlier_count(), 24);
    }

    #[test]
    fn identity_pose_planar_target() {
        let k = camera();
        let scene: Vec<Point3> = (0..9)
            .map(|i| Point3::new((i % 3) as f64 * 20.0 - 20.0, (i / 3) as f64 * 20.0 - 20.0, 150.0))
            .collect();
        let image: Vec<Point2> = scene.iter().map(|p| k.project(p).unwrap()).collect();
        let sol = solve_pnp(&image, &scene, &k, &RobustConfig::pnp()).unwrap();
        assert!(sol.pose.rotation_angle_deg() < 1e-6);
        assert!(sol.pose.translation().norm() < 1e-6);
    }

    #[test]
    fn rejects_collinear_and_short_inputs() {
        let k = camera();
        let scene: Vec<Point3> = (0..8).map(|i| Point3::new(i as f64 * 5.0, 0.0, 100.0)).collect();
        let image: Vec<Point2> = scene.iter().map(|p| k.project(p).unwrap()).collect();
        assert!(matches!(
            solve_pnp(&image, &scene, &k, &RobustConfig::pnp()),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            solve_pnp(&image[..5], &scene[..5], &k, &RobustConfig::pnp()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn outliers_are_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = camera();
        let scene = scene_points(&mut rng, 30);
        let mut image: Vec<Point2> = scene.iter().map(|p| k.project(&pose().transform_point(p)).unwrap()).collect();
        for i in (0..30).step_by(5) {
            image[i].x += 40.0;
            image[i].y -= 25.0;
        }
        let sol = solve_pnp(&image, &scene, &k, &RobustConfig::pnp()).unwrap();
        for (i, inlier) in sol.inliers.iter().enumerate() {
            assert_eq!(*inlier, i % 5 != 0);
        }
        assert!(sol.pose.distance_to(&pose()) < 1e-6);
        for (r, inl) in sol.residuals.iter().zip(&sol.inliers) {
            if *inl {
                assert!(*r <= RobustConfig::pnp().inlier_threshold);
            }
        }
    }
}
