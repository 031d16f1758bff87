//! Pose-error statistics in the layout of the evaluation tables:
//! per-axis absolute translation error, L2 error and quaternion angle.

use crate::error::{Error, Result};
use crate::geometry::{angular_distance, RigidTransform};

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    /// Two-pass mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            count: values.len(),
        }
    }
}

/// Percentile by linear interpolation between order statistics, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

/// Error of one estimated pose against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseError {
    /// |Δx|, |Δy|, |Δz| in mm, expressed in the common reference frame.
    pub axis_mm: [f64; 3],
    pub l2_mm: f64,
    pub angle_deg: f64,
}

impl PoseError {
    pub fn between(estimate: &RigidTransform, truth: &RigidTransform) -> Result<Self> {
        let d = estimate.translation() - truth.translation();
        Ok(Self {
            axis_mm: [d.x.abs(), d.y.abs(), d.z.abs()],
            l2_mm: d.norm(),
            angle_deg: angular_distance(estimate.rotation().quaternion(), truth.rotation().quaternion())?,
        })
    }
}

/// Per-sample errors and their summaries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseErrorReport {
    pub samples: Vec<PoseError>,
}

impl PoseErrorReport {
    pub fn from_pairs(estimates: &[RigidTransform], truths: &[RigidTransform]) -> Result<Self> {
        if estimates.len() != truths.len() {
            return Err(Error::Validation("estimate and truth lists differ in length".into()));
        }
        if estimates.is_empty() {
            return Err(Error::InsufficientData("no samples to evaluate".into()));
        }
        let samples = estimates
            .iter()
            .zip(truths)
            .map(|(e, t)| PoseError::between(e, t))
            .collect::<Result<_>>()?;
        Ok(Self { samples })
    }

    fn column(&self, f: impl Fn(&PoseError) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }

    pub fn axis(&self, i: usize) -> Summary {
        Summary::of(&self.column(|s| s.axis_mm[i]))
    }

    /// All per-axis errors pooled together.
    pub fn axis_pooled(&self) -> Summary {
        Summary::of(&self.samples.iter().flat_map(|s| s.axis_mm).collect::<Vec<_>>())
    }

    pub fn l2(&self) -> Summary {
        Summary::of(&self.column(|s| s.l2_mm))
    }

    pub fn angle(&self) -> Summary {
        Summary::of(&self.column(|s| s.angle_deg))
    }

    pub fn l2_values(&self) -> Vec<f64> {
        self.column(|s| s.l2_mm)
    }

    /// `(key suffix, value)` rows for the key-value report.
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = Vec::new();
        let mut push = |name: &str, s: Summary| {
            rows.push((format!("{name}.mean"), s.mean));
            rows.push((format!("{name}.std"), s.std));
        };
        push("abs_x_mm", self.axis(0));
        push("abs_y_mm", self.axis(1));
        push("abs_z_mm", self.axis(2));
        push("l2_mm", self.l2());
        push("angle_deg", self.angle());
        rows.push(("n".into(), self.samples.len() as f64));
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    /// Welford's streaming mean and variance.
    fn welford(values: &[f64]) -> (f64, f64) {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for &x in values {
            n += 1.0;
            let d = x - mean;
            mean += d / n;
            m2 += d * (x - mean);
        }
        (mean, (m2 / n).sqrt())
    }

    #[test]
    fn equal_poses_report_numerical_zero() {
        let t = RigidTransform::from_rotation_vector(Vector3::new(0.1, 0.2, 0.3), Vector3::new(4.0, 5.0, 6.0));
        let r = PoseErrorReport::from_pairs(&[t, t], &[t, t]).unwrap();
        for (_, v) in r.rows().iter().filter(|(k, _)| k != "n") {
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn pythagorean_offset() {
        let truth = RigidTransform::identity();
        let est = RigidTransform::from_translation(Vector3::new(3.0, 4.0, 0.0));
        let r = PoseErrorReport::from_pairs(&[est], &[truth]).unwrap();
        assert_eq!(r.samples[0].l2_mm, 5.0);
        assert_eq!(r.samples[0].axis_mm, [3.0, 4.0, 0.0]);
        assert!(PoseErrorReport::from_pairs(&[], &[]).is_err());
    }

    #[test]
    fn percentiles() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert_eq!(percentile(&v, 0.25), 2.0);
        assert_eq!(median(&[1.0, 2.0]), 1.5);
    }

    proptest! {
        #[test]
        fn summary_matches_streaming_oracle(values in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            let s = Summary::of(&values);
            let (mean, std) = welford(&values);
            prop_assert!((s.mean - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
            prop_assert!((s.std - std).abs() <= 1e-12 * (1.0 + std.abs()) * 10.0);
        }

        #[test]
        fn l2_bounded_by_axes(dx in -50.0f64..50.0, dy in -50.0f64..50.0, dz in -50.0f64..50.0) {
            let r = PoseErrorReport::from_pairs(
                &[RigidTransform::from_translation(Vector3::new(dx, dy, dz))],
                &[RigidTransform::identity()],
            ).unwrap();
            let e = r.samples[0];
            let sq: f64 = e.axis_mm.iter().map(|a| a * a).sum();
            prop_assert!(e.l2_mm * e.l2_mm <= sq + 1e-9);
        }
    }
}
