//! RANSAC configuration and the bits of sampling machinery shared by the
//! robust estimators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Settings for a threshold-RANSAC estimator.
///
/// `inlier_threshold` is in the residual unit of the estimator using it:
/// pixels for PnP, millimeters for point-set and hand-eye fits.
/// `angle_threshold_deg` is only consulted by the hand-eye solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustConfig {
    pub inlier_threshold: f64,
    pub angle_threshold_deg: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self::pnp()
    }
}

impl RobustConfig {
    /// 2 px reprojection threshold.
    pub fn pnp() -> Self {
        Self {
            inlier_threshold: 2.0,
            angle_threshold_deg: 1.0,
            confidence: 0.999,
            max_iterations: 1000,
            seed: 0,
        }
    }

    /// 1° / 2 mm screw-congruence thresholds.
    pub fn handeye() -> Self {
        Self {
            inlier_threshold: 2.0,
            angle_threshold_deg: 1.0,
            ..Self::pnp()
        }
    }

    /// 1 mm point residual threshold.
    pub fn correction() -> Self {
        Self {
            inlier_threshold: 1.0,
            ..Self::pnp()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.inlier_threshold = threshold;
        self
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Number of iterations needed to draw one all-inlier sample of size
    /// `sample_size` with the configured confidence, given the best inlier
    /// ratio seen so far. Never exceeds `max_iterations`.
    pub(crate) fn required_iterations(&self, inlier_ratio: f64, sample_size: usize) -> usize {
        let w = inlier_ratio.clamp(0.0, 1.0).powi(sample_size as i32);
        if w >= 1.0 - f64::EPSILON {
            return 1;
        }
        if w <= 0.0 {
            return self.max_iterations;
        }
        let n = (1.0 - self.confidence).ln() / (1.0 - w).ln();
        if n.is_finite() {
            (n.ceil() as usize).clamp(1, self.max_iterations)
        } else {
            self.max_iterations
        }
    }
}

/// Keeps the best hypothesis by (inlier count desc, cost asc); ties go to
/// the earliest iteration.
pub(crate) fn better(inliers: usize, cost: f64, current: Option<(usize, f64)>) -> bool {
    match current {
        None => true,
        Some((best_inliers, best_cost)) => {
            inliers > best_inliers || (inliers == best_inliers && cost < best_cost)
        }
    }
}
