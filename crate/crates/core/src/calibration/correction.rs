use rand::seq::index::sample;

use super::kabsch::{rigid_fit, PointPairSet};
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::robust::{better, RobustConfig};

/// Robust rigid fit of the API correction transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionFit {
    /// Maps reported camera-frame points onto actual ones.
    pub transform: RigidTransform,
    pub inliers: Vec<bool>,
    /// Distance `|T · reported_i − actual_i|` for every pair, mm.
    pub residuals: Vec<f64>,
    /// RMS residual over the inliers of the final fit.
    pub rms: f64,
    /// RMS over the same inliers under the winning RANSAC hypothesis.
    pub hypothesis_rms: f64,
}

fn residuals(t: &RigidTransform, pairs: &PointPairSet) -> Vec<f64> {
    pairs
        .reported
        .iter()
        .zip(&pairs.actual)
        .map(|(r, a)| (t.transform_point(r) - a).norm())
        .collect()
}

fn rms_over(residuals: &[f64], mask: &[bool]) -> f64 {
    let (sum, n) = residuals
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (r, _)| (s + r * r, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn select(points: &[Point3], mask: &[bool]) -> Vec<Point3> {
    points.iter().zip(mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect()
}

/// Minimum consensus accepted: three pairs and at least half of the data.
pub(crate) fn minimum_consensus(n: usize) -> usize {
    3.max(n.div_ceil(2))
}

/// Kabsch-Umeyama inside RANSAC over 3-pair samples, refit on the consensus.
pub fn fit_correction(pairs: &PointPairSet, cfg: &RobustConfig) -> Result<CorrectionFit> {
    pairs.validate()?;
    let n = pairs.len();
    let needed_consensus = minimum_consensus(n);
    let threshold = cfg.inlier_threshold;

    let mut rng = cfg.rng();
    let mut best: Option<(RigidTransform, usize, f64)> = None;
    let mut last_error = None;
    let mut needed = cfg.max_iterations;
    let mut iteration = 0;
    while iteration < needed.min(cfg.max_iterations) {
        iteration += 1;
        let idx = sample(&mut rng, n, 3);
        let src: Vec<Point3> = idx.iter().map(|i| pairs.reported[i]).collect();
        let dst: Vec<Point3> = idx.iter().map(|i| pairs.actual[i]).collect();
        let model = match rigid_fit(&src, &dst) {
            Ok(m) => m,
            Err(e) => {
                last_error = Some(e);
                continue;
            }
        };
        let res = residuals(&model, pairs);
        let count = res.iter().filter(|&&r| r <= threshold).count();
        let cost: f64 = res.iter().map(|r| (r * r).min(threshold * threshold)).sum();
        if better(count, cost, best.as_ref().map(|b| (b.1, b.2))) {
            best = Some((model, count, cost));
            needed = cfg.required_iterations(count as f64 / n as f64, 3);
        }
        if n == 3 {
            break;
        }
    }

    let Some((hypothesis, count, _)) = best else {
        return Err(last_error.unwrap_or(Error::Degenerate("no valid sample".into())));
    };
    if count < needed_consensus {
        return Err(Error::NoConsensus {
            inliers: count,
            needed: needed_consensus,
        });
    }

    // Refit until the consensus settles; the transform is always the
    // least-squares fit of the final mask.
    let mut mask: Vec<bool> = residuals(&hypothesis, pairs).iter().map(|&r| r <= threshold).collect();
    let mut transform;
    let mut rounds = 0;
    loop {
        transform = rigid_fit(&select(&pairs.reported, &mask), &select(&pairs.actual, &mask))?;
        rounds += 1;
        let new_mask: Vec<bool> = residuals(&transform, pairs).iter().map(|&r| r <= threshold).collect();
        let settled = new_mask == mask;
        if settled || rounds >= 5 || new_mask.iter().filter(|&&m| m).count() < needed_consensus {
            break;
        }
        mask = new_mask;
    }
    let hypothesis_rms = rms_over(&residuals(&hypothesis, pairs), &mask);

    let res = residuals(&transform, pairs);
    let inliers: Vec<bool> = mask;
    Ok(CorrectionFit {
        transform,
        rms: rms_over(&res, &inliers),
        residuals: res,
        inliers,
        hypothesis_rms,
    })
}
