//! Rigid-body algebra shared by every stage.
//!
//! Rotations are stored as unit quaternions and renormalized after every
//! composition; 3×3 and 4×4 matrices are only materialized at projection
//! boundaries. Lengths are millimeters. Angles crossing a public API are in
//! degrees unless the name says otherwise.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;
pub type Point2 = nalgebra::Point2<f64>;

/// Norm deviation tolerated before a quaternion is rejected as non-unit.
const UNIT_TOLERANCE: f64 = 1e-6;

/// An element of SE(3): maps a point `p` to `rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(
            &Unit::new_normalize(axis),
            angle,
        ))
    }

    /// Builds a transform from an orthonormal rotation matrix.
    pub fn from_matrix_parts(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*rotation));
        Self::new(UnitQuaternion::new_normalize(*rotation.quaternion()), translation)
    }

    /// Exponential-map style constructor: rotation vector (radians) plus translation.
    pub fn from_rotation_vector(rotation_vector: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(rotation_vector), translation)
    }

    /// Parses the seven-number `qw qx qy qz tx ty tz` layout used by every file format.
    ///
    /// Quaternions within 1e-9 of unit norm are kept bit-for-bit so that
    /// serialization round trips are exact; small drift is renormalized and
    /// anything further off is rejected.
    pub fn from_array7(values: [f64; 7]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("pose contains non-finite values".into()));
        }
        let q = Quaternion::new(values[0], values[1], values[2], values[3]);
        let norm = q.norm();
        let rotation = if (norm - 1.0).abs() <= 1e-9 {
            UnitQuaternion::new_unchecked(q)
        } else if (norm - 1.0).abs() <= 1e-3 {
            UnitQuaternion::new_normalize(q)
        } else {
            return Err(Error::Validation(format!(
                "rotation quaternion has norm {norm}, expected 1"
            )));
        };
        Ok(Self::new(
            rotation,
            Vector3::new(values[4], values[5], values[6]),
        ))
    }

    pub fn to_array7(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = self.translation;
        [q.w, q.i, q.j, q.k, t.x, t.y, t.z]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation = UnitQuaternion::new_normalize(
            self.rotation.quaternion() * other.rotation.quaternion(),
        );
        let translation = self.rotation * other.translation + self.translation;
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.inverse();
        RigidTransform {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle of this transform in degrees, in [0, 180].
    pub fn rotation_angle_deg(&self) -> f64 {
        quaternion_angle(self.rotation.quaternion()).to_degrees()
    }

    /// Geodesic rotation distance to `other` in degrees.
    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.quaternion().conjugate() * other.rotation.quaternion();
        quaternion_angle(&rel).to_degrees()
    }

    /// Euclidean distance between the translation parts, in mm.
    pub fn distance_to(&self, other: &RigidTransform) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Slerp on rotation, lerp on translation; `s` in [0, 1].
    pub fn interpolate(&self, other: &RigidTransform, s: f64) -> RigidTransform {
        let mut target = *other.rotation.quaternion();
        if self.rotation.quaternion().dot(&target) < 0.0 {
            target = -target;
        }
        let rotation = self
            .rotation
            .try_slerp(&UnitQuaternion::new_unchecked(target), s, 1e-12)
            .unwrap_or_else(|| {
                UnitQuaternion::new_normalize(self.rotation.quaternion().lerp(&target, s))
            });
        RigidTransform {
            rotation,
            translation: self.translation.lerp(&other.translation, s),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array7().iter().all(|v| v.is_finite())
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a RigidTransform> for &'a RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: &'a RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

pub fn transform_point(t: &RigidTransform, p: &Point3) -> Point3 {
    t.transform_point(p)
}

/// Angle in radians encoded by a (unit) quaternion, double-cover aware.
fn quaternion_angle(q: &Quaternion<f64>) -> f64 {
    2.0 * q.imag().norm().atan2(q.w.abs())
}

/// Geodesic angle between two unit quaternions in degrees, in [0, 180].
///
/// `q` and `-q` describe the same rotation and are at distance zero.
pub fn angular_distance(a: &Quaternion<f64>, b: &Quaternion<f64>) -> Result<f64> {
    for q in [a, b] {
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Validation(format!(
                "angular distance needs unit quaternions, got norm {n}"
            )));
        }
    }
    Ok(quaternion_angle(&(a.conjugate() * b)).to_degrees())
}

/// Unit dual quaternion `real + ε dual` encoding a rigid motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuaternion {
    pub real: Quaternion<f64>,
    pub dual: Quaternion<f64>,
}

impl DualQuaternion {
    pub fn identity() -> Self {
        Self {
            real: Quaternion::identity(),
            dual: Quaternion::new(0.0, 0.0, 0.0, 0.0),
        }
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        let real = *t.rotation().quaternion();
        let tq = Quaternion::from_imag(*t.translation());
        Self {
            real,
            dual: tq * real * 0.5,
        }
    }

    /// Inverse of [`DualQuaternion::from_transform`]; rejects non-unit input.
    pub fn to_transform(&self) -> Result<RigidTransform> {
        let norm = self.real.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "dual quaternion real part has norm {norm}"
            )));
        }
        let orthogonality = self.real.dot(&self.dual);
        if orthogonality.abs() > 1e-9 * self.dual.norm().max(1.0) {
            return Err(Error::Validation(format!(
                "dual quaternion violates real·dual = 0 (got {orthogonality})"
            )));
        }
        let t = (self.dual * self.real.conjugate()) * 2.0;
        Ok(RigidTransform::new(
            UnitQuaternion::new_unchecked(self.real),
            t.imag(),
        ))
    }

    pub fn compose(&self, other: &DualQuaternion) -> DualQuaternion {
        DualQuaternion {
            real: self.real * other.real,
            dual: self.real * other.dual + self.dual * other.real,
        }
    }

    /// Flips sign so the real scalar part is non-negative.
    pub fn canonical(&self) -> DualQuaternion {
        if self.real.w < 0.0 {
            DualQuaternion {
                real: -self.real,
                dual: -self.dual,
            }
        } else {
            *self
        }
    }
}

pub fn to_dual_quaternion(t: &RigidTransform) -> DualQuaternion {
    DualQuaternion::from_transform(t)
}

pub fn from_dual_quaternion(dq: &DualQuaternion) -> Result<RigidTransform> {
    dq.to_transform()
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn assert_close(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        assert!(a.angle_to(b) < tol, "angle {} >= {tol}", a.angle_to(b));
        assert!(a.distance_to(b) < tol, "distance {} >= {tol}", a.distance_to(b));
    }

    #[test]
    fn identity_cases() {
        let i = RigidTransform::identity();
        assert_close(&compose(&i, &i), &i, 1e-15);
        assert_close(&invert(&i), &i, 1e-15);
        assert_eq!(
            transform_point(&i, &Point3::new(1.0, 0.0, 0.0)),
            Point3::new(1.0, 0.0, 0.0)
        );
    }

    #[test]
    fn invert_pure_translation() {
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(*invert(&t).translation(), Vector3::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2);
        let p = t.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn angular_distance_cases() {
        let q = *RigidTransform::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.7)
            .rotation()
            .quaternion();
        assert!(angular_distance(&q, &q).unwrap().abs() < 1e-12);
        assert!(angular_distance(&q, &-q).unwrap().abs() < 1e-12);
        let z90 = *RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2)
            .rotation()
            .quaternion();
        let d = angular_distance(&Quaternion::identity(), &z90).unwrap();
        assert!((d - 90.0).abs() < 1e-12);
    }

    #[test]
    fn angular_distance_rejects_non_unit() {
        let q = Quaternion::new(2.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            angular_distance(&q, &Quaternion::identity()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn dual_quaternion_identity_and_translation() {
        let dq = to_dual_quaternion(&RigidTransform::identity());
        assert_eq!(dq, DualQuaternion::identity());

        let t = Vector3::new(4.0, -2.0, 7.0);
        let dq = to_dual_quaternion(&RigidTransform::from_translation(t));
        let expected = Quaternion::from_imag(t) * dq.real * 0.5;
        assert!((dq.dual - expected).norm() < 1e-15);
        let back = from_dual_quaternion(&dq).unwrap();
        assert!((back.translation() - t).norm() < 1e-12);
    }

    #[test]
    fn dual_quaternion_rejects_non_unit() {
        let mut dq = DualQuaternion::identity();
        dq.real *= 1.1;
        assert!(from_dual_quaternion(&dq).is_err());
        let mut dq = DualQuaternion::identity();
        dq.dual = Quaternion::new(1.0, 0.0, 0.0, 0.0);
        assert!(from_dual_quaternion(&dq).is_err());
    }

    #[test]
    fn array7_round_trip_is_bit_exact() {
        let t = RigidTransform::from_rotation_vector(
            Vector3::new(0.3, -0.2, 0.9),
            Vector3::new(10.5, -3.25, 120.0),
        );
        let back = RigidTransform::from_array7(t.to_array7()).unwrap();
        assert_eq!(back.to_array7(), t.to_array7());
        assert!(RigidTransform::from_array7([2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn interpolation_midpoint_of_quarter_turn() {
        let a = RigidTransform::identity();
        let b = RigidTransform::new(
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2),
            Vector3::new(10.0, 0.0, 0.0),
        );
        let mid = a.interpolate(&b, 0.5);
        assert!((mid.rotation_angle_deg() - 45.0).abs() < 1e-9);
        assert!((mid.translation().x - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn compose_matches_two_step_application(a in arb_transform(), b in arb_transform(), p in arb_point()) {
            let direct = compose(&a, &b).transform_point(&p);
            let two_step = a.transform_point(&b.transform_point(&p));
            prop_assert!((direct - two_step).norm() < 1e-9);
        }

        #[test]
        fn compose_with_inverse_is_identity(t in arb_transform()) {
            let i = compose(&t, &invert(&t));
            prop_assert!(i.rotation_angle_deg() < 1e-9);
            prop_assert!(i.translation().norm() < 1e-9);
            prop_assert!((i.rotation().quaternion().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn double_inverse(t in arb_transform()) {
            let back = invert(&invert(&t));
            prop_assert!(back.angle_to(&t) < 1e-9);
            prop_assert!(back.distance_to(&t) < 1e-9);
        }

        #[test]
        fn transform_point_matches_homogeneous_matrix(t in arb_transform(), p in arb_point()) {
            let m = t.to_matrix();
            let h = m * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            let q = t.transform_point(&p);
            prop_assert!((Vector3::new(h.x, h.y, h.z) - q.coords).norm() < 1e-9);
        }

        #[test]
        fn associativity(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let left = compose(&compose(&a, &b), &c);
            let right = compose(&a, &compose(&b, &c));
            prop_assert!(left.angle_to(&right) < 1e-9);
            prop_assert!(left.distance_to(&right) < 1e-9);
        }

        #[test]
        fn dual_quaternion_round_trip(t in arb_transform()) {
            let back = from_dual_quaternion(&to_dual_quaternion(&t)).unwrap();
            prop_assert!(back.angle_to(&t) < 1e-9);
            prop_assert!(back.distance_to(&t) < 1e-9);
        }

        #[test]
        fn dual_quaternion_composition_agrees(a in arb_transform(), b in arb_transform()) {
            let dq = to_dual_quaternion(&a).compose(&to_dual_quaternion(&b));
            let via_dq = from_dual_quaternion(&dq).unwrap();
            let direct = compose(&a, &b);
            prop_assert!(via_dq.angle_to(&direct) < 1e-9);
            prop_assert!(via_dq.distance_to(&direct) < 1e-9);
        }
    }
}
