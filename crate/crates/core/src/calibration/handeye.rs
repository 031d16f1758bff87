//! AX = XB by the dual-quaternion null-space method, wrapped in RANSAC.

use nalgebra::{DMatrix, Quaternion, SVector, UnitQuaternion, Vector3};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::geometry::{skew, DualQuaternion, RigidTransform};
use crate::robust::{better, RobustConfig};

/// Motions below this rotation angle carry no usable axis.
pub const MIN_MOTION_DEG: f64 = 0.5;
/// Rotation axes must spread at least this far apart for the translation to be observable.
pub const MIN_AXIS_SPREAD_DEG: f64 = 5.0;

/// One camera motion `a` and the matching robot motion `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPair {
    pub a: RigidTransform,
    pub b: RigidTransform,
}

/// Pairs consecutive poses into relative motions.
///
/// `cam_poses[i]` is the camera-to-scene registration at station `i` and
/// `robot_poses[i]` the base-to-flange pose. The pair is
/// `a = C_i C_{i+1}⁻¹`, `b = E_i⁻¹ E_{i+1}`; the hand-eye transform that
/// solves `a X = X b` for these pairs is flange-to-camera inverted, i.e. it
/// maps flange coordinates into camera coordinates.
pub fn build_motion_pairs(
    cam_poses: &[RigidTransform],
    robot_poses: &[RigidTransform],
) -> Result<Vec<MotionPair>> {
    if cam_poses.len() != robot_poses.len() {
        return Err(Error::Validation(format!(
            "{} camera poses but {} robot poses",
            cam_poses.len(),
            robot_poses.len()
        )));
    }
    if cam_poses.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 stations, got {}",
            cam_poses.len()
        )));
    }
    Ok(cam_poses
        .windows(2)
        .zip(robot_poses.windows(2))
        .map(|(c, e)| MotionPair {
            a: c[0] * c[1].inverse(),
            b: e[0].inverse() * e[1],
        })
        .collect())
}

/// Result of a robust hand-eye solve.
#[derive(Debug, Clone, PartialEq)]
pub struct HandEyeFit {
    /// Solution of `a X = X b`.
    pub transform: RigidTransform,
    pub inliers: Vec<bool>,
    /// Per-pair `(angle deg, translation mm)` of `(a X)⁻¹ (X b)`.
    pub residuals: Vec<(f64, f64)>,
}

impl HandEyeFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Screw-congruence residual of one pair under candidate `x`.
pub fn pair_residual(pair: &MotionPair, x: &RigidTransform) -> (f64, f64) {
    let lhs = pair.a * *x;
    let rhs = *x * pair.b;
    (lhs.angle_to(&rhs), lhs.distance_to(&rhs))
}

fn rotation_axis(t: &RigidTransform) -> Option<Vector3<f64>> {
    (t.rotation_angle_deg() >= MIN_MOTION_DEG)
        .then(|| t.rotation().axis().map(|a| a.into_inner()))
        .flatten()
}

/// Largest angle between any two motion axes, as lines (sign ignored).
fn axis_spread_deg<'a>(pairs: impl Iterator<Item = &'a MotionPair>) -> (usize, f64) {
    let axes: Vec<_> = pairs.filter_map(|p| rotation_axis(&p.b)).collect();
    let mut spread: f64 = 0.0;
    for (i, u) in axes.iter().enumerate() {
        for v in &axes[i + 1..] {
            let angle = u.dot(v).abs().min(1.0).acos().to_degrees();
            spread = spread.max(angle);
        }
    }
    (axes.len(), spread)
}

fn check_observable<'a>(pairs: impl Iterator<Item = &'a MotionPair>) -> Result<()> {
    let (count, spread) = axis_spread_deg(pairs);
    if count < 2 {
        return Err(Error::UnobservableTranslation(format!(
            "only {count} motions rotate by at least {MIN_MOTION_DEG}°"
        )));
    }
    if spread < MIN_AXIS_SPREAD_DEG {
        return Err(Error::UnobservableTranslation(format!(
            "rotation axes span only {spread:.3}°, need {MIN_AXIS_SPREAD_DEG}°"
        )));
    }
    Ok(())
}

/// Stacks the 6×8 screw constraints of every pair and extracts the unit
/// dual quaternion from the two-dimensional null space.
fn solve_dual_quaternion(pairs: &[&MotionPair]) -> Option<RigidTransform> {
    if pairs.len() < 2 {
        return None;
    }
    let mut t = DMatrix::<f64>::zeros(6 * pairs.len(), 8);
    for (i, pair) in pairs.iter().enumerate() {
        let a = DualQuaternion::from_transform(&pair.a).canonical();
        let b = DualQuaternion::from_transform(&pair.b).canonical();
        let (ar, br) = (a.real.imag(), b.real.imag());
        let (ad, bd) = (a.dual.imag(), b.dual.imag());
        let row = 6 * i;
        t.fixed_view_mut::<3, 1>(row, 0).copy_from(&(ar - br));
        t.fixed_view_mut::<3, 3>(row, 1).copy_from(&skew(&(ar + br)));
        t.fixed_view_mut::<3, 1>(row + 3, 0).copy_from(&(ad - bd));
        t.fixed_view_mut::<3, 3>(row + 3, 1).copy_from(&skew(&(ad + bd)));
        t.fixed_view_mut::<3, 1>(row + 3, 4).copy_from(&(ar - br));
        t.fixed_view_mut::<3, 3>(row + 3, 5).copy_from(&skew(&(ar + br)));
    }

    let svd = t.svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let v1: SVector<f64, 8> = v_t.row(order[0]).transpose().fixed_rows::<8>(0).into();
    let v2: SVector<f64, 8> = v_t.row(order[1]).transpose().fixed_rows::<8>(0).into();

    let (u1, w1) = (v1.fixed_rows::<4>(0), v1.fixed_rows::<4>(4));
    let (u2, w2) = (v2.fixed_rows::<4>(0), v2.fixed_rows::<4>(4));

    // x = s·v1 + v2 must satisfy real·dual = 0 (quadratic in s); pick the
    // root with the larger real-part norm, then scale it to unit length.
    let qa = u1.dot(&w1);
    let qb = u1.dot(&w2) + u2.dot(&w1);
    let qc = u2.dot(&w2);
    let mut candidates: Vec<SVector<f64, 8>> = Vec::with_capacity(2);
    if qa.abs() > 1e-12 * (qb.abs() + qc.abs()).max(1e-300) {
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
        for s in [(-qb + disc) / (2.0 * qa), (-qb - disc) / (2.0 * qa)] {
            candidates.push(v1 * s + v2);
        }
    } else {
        candidates.push(v1);
        if qb.abs() > 0.0 {
            candidates.push(v1 * (-qc / qb) + v2);
        }
    }
    let x = candidates
        .into_iter()
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .max_by(|a, b| {
            a.fixed_rows::<4>(0)
                .norm_squared()
                .total_cmp(&b.fixed_rows::<4>(0).norm_squared())
        })?;
    let scale = x.fixed_rows::<4>(0).norm();
    if scale < 1e-12 {
        return None;
    }
    let x = x / scale;
    let real = Quaternion::new(x[0], x[1], x[2], x[3]);
    let dual = Quaternion::new(x[4], x[5], x[6], x[7]);
    let translation = (dual * real.conjugate() * 2.0).imag();
    Some(RigidTransform::new(
        UnitQuaternion::new_normalize(real),
        translation,
    ))
}

/// Least-squares refit on many pairs: rotation from the real-part screw
/// constraints alone, then translation from `(R_a - I) t = R t_b - t_a`.
/// Solving the two separately keeps millimetre-scale translation noise from
/// swamping the dimensionless rotation rows.
fn solve_separable(pairs: &[&MotionPair]) -> Option<RigidTransform> {
    if pairs.len() < 2 {
        return None;
    }
    let mut m = DMatrix::<f64>::zeros(3 * pairs.len(), 4);
    for (i, pair) in pairs.iter().enumerate() {
        let ar = DualQuaternion::from_transform(&pair.a).canonical().real.imag();
        let br = DualQuaternion::from_transform(&pair.b).canonical().real.imag();
        m.fixed_view_mut::<3, 1>(3 * i, 0).copy_from(&(ar - br));
        m.fixed_view_mut::<3, 3>(3 * i, 1).copy_from(&skew(&(ar + br)));
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let smallest = (0..svd.singular_values.len()).min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))?;
    let q = v_t.row(smallest);
    let rotation = UnitQuaternion::try_new(Quaternion::new(q[0], q[1], q[2], q[3]), 1e-12)?;
    let r = rotation.to_rotation_matrix();

    let mut lhs = DMatrix::<f64>::zeros(3 * pairs.len(), 3);
    let mut rhs = nalgebra::DVector::<f64>::zeros(3 * pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let ra = pair.a.rotation_matrix() - nalgebra::Matrix3::identity();
        lhs.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&ra);
        rhs.fixed_rows_mut::<3>(3 * i)
            .copy_from(&(r * pair.b.translation() - pair.a.translation()));
    }
    let t = lhs.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let translation = Vector3::new(t[0], t[1], t[2]);
    translation.iter().all(|v| v.is_finite()).then(|| RigidTransform::new(rotation, translation))
}

fn is_inlier(residual: (f64, f64), cfg: &RobustConfig) -> bool {
    residual.0 <= cfg.angle_threshold_deg && residual.1 <= cfg.inlier_threshold
}

fn score(pairs: &[MotionPair], x: &RigidTransform, cfg: &RobustConfig) -> (usize, f64) {
    pairs.iter().fold((0, 0.0), |(n, cost), p| {
        let r = pair_residual(p, x);
        let normalized = (r.0 / cfg.angle_threshold_deg).powi(2) + (r.1 / cfg.inlier_threshold).powi(2);
        if is_inlier(r, cfg) {
            (n + 1, cost + normalized)
        } else {
            (n, cost + 2.0)
        }
    })
}

/// Robust hand-eye solve: RANSAC over 3-pair samples, refit on the consensus.
///
/// The returned transform satisfies `a_i X ≈ X b_i` on the inliers.
pub fn solve_handeye(pairs: &[MotionPair], cfg: &RobustConfig) -> Result<HandEyeFit> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "hand-eye needs at least 2 motion pairs, got {}",
            pairs.len()
        )));
    }
    check_observable(pairs.iter())?;

    let sample_size = 3.min(pairs.len());
    let mut rng = cfg.rng();
    let mut best: Option<(RigidTransform, usize, f64)> = None;
    let mut needed = cfg.max_iterations;
    let mut iteration = 0;
    while iteration < needed.min(cfg.max_iterations) {
        iteration += 1;
        let idx = sample(&mut rng, pairs.len(), sample_size);
        let subset: Vec<&MotionPair> = idx.iter().map(|i| &pairs[i]).collect();
        if check_observable(subset.iter().copied()).is_err() {
            continue;
        }
        let Some(x) = solve_dual_quaternion(&subset) else {
            continue;
        };
        let (n, cost) = score(pairs, &x, cfg);
        if better(n, cost, best.as_ref().map(|b| (b.1, b.2))) {
            best = Some((x, n, cost));
            needed = cfg.required_iterations(n as f64 / pairs.len() as f64, sample_size);
        }
    }

    let Some((mut x, _, _)) = best else {
        return Err(Error::NoConsensus {
            inliers: 0,
            needed: 2,
        });
    };

    // Refit on the consensus until the inlier set stops changing; a refit
    // that loses support is discarded.
    let mut mask: Vec<bool> = pairs.iter().map(|p| is_inlier(pair_residual(p, &x), cfg)).collect();
    for _ in 0..5 {
        let subset: Vec<&MotionPair> = pairs.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| p).collect();
        if subset.len() < 2 || check_observable(subset.iter().copied()).is_err() {
            break;
        }
        let Some(refit) = solve_separable(&subset) else {
            break;
        };
        let new_mask: Vec<bool> = pairs.iter().map(|p| is_inlier(pair_residual(p, &refit), cfg)).collect();
        if new_mask.iter().filter(|&&b| b).count() < mask.iter().filter(|&&b| b).count() {
            break;
        }
        x = refit;
        if new_mask == mask {
            break;
        }
        mask = new_mask;
    }

    let residuals: Vec<(f64, f64)> = pairs.iter().map(|p| pair_residual(p, &x)).collect();
    let inliers: Vec<bool> = residuals.iter().map(|&r| is_inlier(r, cfg)).collect();
    let count = inliers.iter().filter(|&&b| b).count();
    if count < 2 {
        return Err(Error::NoConsensus {
            inliers: count,
            needed: 2,
        });
    }
    Ok(HandEyeFit {
        transform: x,
        inliers,
        residuals,
    })
}
