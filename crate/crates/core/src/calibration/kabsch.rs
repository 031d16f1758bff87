use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};

/// Corresponding point lists: `actual[i] ≈ T * reported[i]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointPairSet {
    pub actual: Vec<Point3>,
    pub reported: Vec<Point3>,
}

impl PointPairSet {
    pub fn new(actual: Vec<Point3>, reported: Vec<Point3>) -> Result<Self> {
        let set = Self { actual, reported };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.actual.len() != self.reported.len() {
            return Err(Error::Validation(format!(
                "{} actual points but {} reported points",
                self.actual.len(),
                self.reported.len()
            )));
        }
        if self.actual.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "rigid fit needs at least 3 point pairs, got {}",
                self.actual.len()
            )));
        }
        Ok(())
    }

    /// Point-pair file: `ax ay az rx ry rz` per line (actual then reported, mm).
    pub fn parse(text: &str) -> Result<Self> {
        let mut set = PointPairSet::default();
        for (line, tokens) in crate::formats::records(text) {
            let v = crate::formats::parse_floats::<6>(&tokens, line)?;
            set.actual.push(Point3::new(v[0], v[1], v[2]));
            set.reported.push(Point3::new(v[3], v[4], v[5]));
        }
        Ok(set)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# ax ay az rx ry rz (mm)\n");
        for (a, r) in self.actual.iter().zip(&self.reported) {
            crate::formats::write_floats(&mut out, &[a.x, a.y, a.z, r.x, r.y, r.z]);
            out.push('\n');
        }
        out
    }
}

fn centroid(points: &[Point3]) -> Vector3<f64> {
    points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / points.len() as f64
}

/// Least-squares rigid transform (proper rotation, no scale) taking
/// `source[i]` onto `target[i]`.
pub fn rigid_fit(source: &[Point3], target: &[Point3]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::Validation("point lists differ in length".into()));
    }
    if source.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "rigid fit needs at least 3 points, got {}",
            source.len()
        )));
    }
    let cs = centroid(source);
    let ct = centroid(target);

    let mut cross = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s.coords - cs;
        cross += ds * (t.coords - ct).transpose();
        spread += ds * ds.transpose();
    }

    let spread_sv = spread.symmetric_eigenvalues();
    let mut sv: Vec<f64> = spread_sv.iter().map(|v| v.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[1] <= 1e-9 * sv[0] || sv[0] == 0.0 {
        return Err(Error::Degenerate(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let t = ct - rotation * cs;
    Ok(RigidTransform::from_matrix_parts(&rotation, t))
}

/// Kabsch-Umeyama without scale: maps reported points onto actual points.
pub fn kabsch_umeyama(pairs: &PointPairSet) -> Result<RigidTransform> {
    pairs.validate()?;
    rigid_fit(&pairs.reported, &pairs.actual)
}
