//! Pinhole camera with Brown-Conrady distortion, the OpenGL-style render
//! matrix, and view-frustum clipping.
//!
//! Camera frame: x right, y down, z along the optical axis (into the image).
//! Normalized device coordinates keep the same axis directions; NDC x and y
//! span the image from -1 to 1 and NDC z maps the near plane to -1 and the
//! far plane to +1.

use std::fmt::Write as _;

use nalgebra::{Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::formats::{parse_f64, records};
use crate::geometry::{Point2, Point3};

/// Which endoscope camera a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CameraSide {
    Left,
    Right,
}

impl CameraSide {
    pub fn name(self) -> &'static str {
        match self {
            CameraSide::Left => "left",
            CameraSide::Right => "right",
        }
    }
}

impl std::str::FromStr for CameraSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(CameraSide::Left),
            "right" => Ok(CameraSide::Right),
            other => Err(Error::Validation(format!("unknown camera `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
    pub width: f64,
    pub height: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    /// Distortion-free intrinsics.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            p1: 0.0,
            p2: 0.0,
            k3: 0.0,
            width,
            height,
            near: 1.0,
            far: 1000.0,
        }
    }

    pub fn with_clip(mut self, near: f64, far: f64) -> Self {
        self.near = near;
        self.far = far;
        self
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64, p1: f64, p2: f64, k3: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self.p1 = p1;
        self.p2 = p2;
        self.k3 = k3;
        self
    }

    pub fn without_distortion(self) -> Self {
        self.with_distortion(0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.p1, self.p2, self.k3,
            self.width, self.height, self.near, self.far,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("intrinsics contain non-finite values".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::Validation("image size must be positive".into()));
        }
        if !(0.0 < self.near && self.near < self.far) {
            return Err(Error::Validation("clip planes need 0 < near < far".into()));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        [self.k1, self.k2, self.p1, self.p2, self.k3]
            .iter()
            .any(|&v| v != 0.0)
    }

    /// Applies Brown-Conrady distortion to normalized image coordinates.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }

    /// Jacobian of [`CameraIntrinsics::distort`] as `[[dxd/dx, dxd/dy], [dyd/dx, dyd/dy]]`.
    pub(crate) fn distort_jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        // d(radial)/d(r2)
        let dradial = self.k1 + r2 * (2.0 * self.k2 + 3.0 * r2 * self.k3);
        let dxd_dx = radial + x * dradial * 2.0 * x + 2.0 * self.p1 * y + self.p2 * 6.0 * x;
        let dxd_dy = x * dradial * 2.0 * y + 2.0 * self.p1 * x + self.p2 * 2.0 * y;
        let dyd_dx = y * dradial * 2.0 * x + self.p1 * 2.0 * x + 2.0 * self.p2 * y;
        let dyd_dy = radial + y * dradial * 2.0 * y + self.p1 * 6.0 * y + 2.0 * self.p2 * x;
        [[dxd_dx, dxd_dy], [dyd_dx, dyd_dy]]
    }

    /// Numerically inverts the distortion model by fixed-point iteration.
    ///
    /// Only used to seed pose solvers; every residual is still evaluated in
    /// distorted pixel space.
    pub fn undistort(&self, xd: f64, yd: f64) -> (f64, f64) {
        if !self.has_distortion() {
            return (xd, yd);
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..50 {
            let (fx, fy) = self.distort(x, y);
            let (ex, ey) = (fx - xd, fy - yd);
            if ex.abs() < 1e-15 && ey.abs() < 1e-15 {
                break;
            }
            let j = self.distort_jacobian(x, y);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-12 {
                break;
            }
            x -= (j[1][1] * ex - j[0][1] * ey) / det;
            y -= (-j[1][0] * ex + j[0][0] * ey) / det;
        }
        (x, y)
    }

    /// Pixel coordinates to normalized (undistorted) image coordinates.
    pub fn pixel_to_normalized(&self, px: &Point2) -> Point2 {
        let xd = (px.x - self.cx) / self.fx;
        let yd = (px.y - self.cy) / self.fy;
        let (x, y) = self.undistort(xd, yd);
        Point2::new(x, y)
    }

    pub fn project(&self, p_cam: &Point3) -> Result<Point2> {
        project_point(self, p_cam)
    }

    pub fn render_matrix(&self) -> Matrix4<f64> {
        build_render_matrix(self)
    }

    /// Maps NDC x/y to pixel coordinates.
    pub fn ndc_to_pixel(&self, ndc: &Point2) -> Point2 {
        Point2::new(
            (ndc.x + 1.0) * 0.5 * self.width,
            (ndc.y + 1.0) * 0.5 * self.height,
        )
    }

    pub fn frustum(&self) -> Frustum {
        Frustum::from_intrinsics(self)
    }

    /// Reads the intrinsics text format: one `name value` pair per line.
    ///
    /// Required: `fx fy cx cy width height`. Optional (default 0): `k1 k2 p1
    /// p2 k3`. Optional: `near` (default 1 mm), `far` (default 1000 mm).
    pub fn parse(text: &str) -> Result<Self> {
        let mut k = CameraIntrinsics::pinhole(f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
        for (line, tokens) in records(text) {
            if tokens.len() != 2 {
                return Err(Error::parse(line, "expected `name value`"));
            }
            let value = parse_f64(tokens[1], line)?;
            let slot = match tokens[0] {
                "fx" => &mut k.fx,
                "fy" => &mut k.fy,
                "cx" => &mut k.cx,
                "cy" => &mut k.cy,
                "k1" => &mut k.k1,
                "k2" => &mut k.k2,
                "k3" => &mut k.k3,
                "p1" => &mut k.p1,
                "p2" => &mut k.p2,
                "width" => &mut k.width,
                "height" => &mut k.height,
                "near" => &mut k.near,
                "far" => &mut k.far,
                other => return Err(Error::parse(line, format!("unknown field `{other}`"))),
            };
            *slot = value;
        }
        k.validate().map_err(|e| Error::parse(0, e.to_string()))?;
        Ok(k)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# ghostline intrinsics v1 (pixels, mm)\n");
        for (name, v) in [
            ("fx", self.fx),
            ("fy", self.fy),
            ("cx", self.cx),
            ("cy", self.cy),
            ("k1", self.k1),
            ("k2", self.k2),
            ("p1", self.p1),
            ("p2", self.p2),
            ("k3", self.k3),
            ("width", self.width),
            ("height", self.height),
            ("near", self.near),
            ("far", self.far),
        ] {
            let _ = writeln!(out, "{name} {v}");
        }
        out
    }
}

/// Perspective divide, distortion, then the pixel affine map.
pub fn project_point(k: &CameraIntrinsics, p_cam: &Point3) -> Result<Point2> {
    if p_cam.z <= 0.0 {
        return Err(Error::BehindCamera(p_cam.z));
    }
    let (xd, yd) = k.distort(p_cam.x / p_cam.z, p_cam.y / p_cam.z);
    Ok(Point2::new(k.fx * xd + k.cx, k.fy * yd + k.cy))
}

/// Homogeneous projection from the camera frame to clip space.
///
/// After dividing by `w` (the camera depth), x and y are NDC image
/// coordinates and z is -1 at `near`, +1 at `far`.
pub fn build_render_matrix(k: &CameraIntrinsics) -> Matrix4<f64> {
    let (n, f) = (k.near, k.far);
    Matrix4::new(
        2.0 * k.fx / k.width, 0.0, 2.0 * k.cx / k.width - 1.0, 0.0,
        0.0, 2.0 * k.fy / k.height, 2.0 * k.cy / k.height - 1.0, 0.0,
        0.0, 0.0, (f + n) / (f - n), -2.0 * f * n / (f - n),
        0.0, 0.0, 1.0, 0.0,
    )
}

/// Applies a render matrix to a camera-frame point and performs the divide.
/// Returns `None` when the point is at or behind the camera plane.
pub fn to_ndc(render: &Matrix4<f64>, p_cam: &Point3) -> Option<Point3> {
    let clip = render * Vector4::new(p_cam.x, p_cam.y, p_cam.z, 1.0);
    (clip.w > 0.0).then(|| Point3::new(clip.x / clip.w, clip.y / clip.w, clip.z / clip.w))
}

/// A half-space `normal · p + offset > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn signed_value(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) + self.offset
    }
}

/// The viewing volume as six inward-facing planes in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frustum {
    pub planes: [Plane; 6],
}

impl Frustum {
    /// Left, right, top, bottom image borders plus the near and far planes.
    pub fn from_intrinsics(k: &CameraIntrinsics) -> Self {
        let plane = |nx: f64, ny: f64, nz: f64, offset: f64| Plane {
            normal: Vector3::new(nx, ny, nz),
            offset,
        };
        Frustum {
            planes: [
                // u > 0
                plane(k.fx, 0.0, k.cx, 0.0),
                // u < width
                plane(-k.fx, 0.0, k.width - k.cx, 0.0),
                // v > 0
                plane(0.0, k.fy, k.cy, 0.0),
                // v < height
                plane(0.0, -k.fy, k.height - k.cy, 0.0),
                plane(0.0, 0.0, 1.0, -k.near),
                plane(0.0, 0.0, -1.0, k.far),
            ],
        }
    }

    pub fn contains(&self, p_cam: &Point3) -> bool {
        self.planes.iter().all(|pl| pl.signed_value(p_cam) > 0.0)
    }
}

/// True iff the point lies strictly inside all six frustum planes.
pub fn clip_visible(f: &Frustum, p_cam: &Point3) -> bool {
    f.contains(p_cam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn simple() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(1000.0, 1000.0, 500.0, 500.0, 1000.0, 1000.0).with_clip(10.0, 500.0)
    }

    fn realistic() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(820.0, 815.0, 310.0, 255.0, 640.0, 480.0).with_clip(5.0, 400.0)
    }

    /// Brown-Conrady written out term by term, independent of `distort`.
    fn brown_conrady_oracle(k: &CameraIntrinsics, p: &Point3) -> Point2 {
        let x = p.x / p.z;
        let y = p.y / p.z;
        let r2 = x.powi(2) + y.powi(2);
        let r4 = r2.powi(2);
        let r6 = r2.powi(3);
        let radial = 1.0 + k.k1 * r2 + k.k2 * r4 + k.k3 * r6;
        let dx = 2.0 * k.p1 * x * y + k.p2 * (r2 + 2.0 * x.powi(2));
        let dy = k.p1 * (r2 + 2.0 * y.powi(2)) + 2.0 * k.p2 * x * y;
        Point2::new(k.fx * (x * radial + dx) + k.cx, k.fy * (y * radial + dy) + k.cy)
    }

    #[test]
    fn optical_axis_and_offset_points() {
        let k = simple();
        let p = project_point(&k, &Point3::new(0.0, 0.0, 100.0)).unwrap();
        assert_eq!(p, Point2::new(500.0, 500.0));
        let p = project_point(&k, &Point3::new(10.0, 0.0, 100.0)).unwrap();
        assert!((p - Point2::new(600.0, 500.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        assert!(matches!(
            project_point(&simple(), &Point3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
        assert!(project_point(&simple(), &Point3::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn distortion_matches_oracle_on_grid() {
        let k = simple().with_distortion(-0.1, 0.0, 0.0, 0.0, 0.0);
        let k_full = realistic().with_distortion(-0.28, 0.09, 0.001, -0.0007, -0.01);
        for kk in [k, k_full] {
            for i in -5..=5 {
                for j in -5..=5 {
                    let p = Point3::new(i as f64 * 8.0, j as f64 * 8.0, 100.0);
                    let got = project_point(&kk, &p).unwrap();
                    let want = brown_conrady_oracle(&kk, &p);
                    assert!((got - want).norm() < 1e-9, "{got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn zero_distortion_is_identity_on_normalized_coords() {
        let k = realistic();
        for &(x, y) in &[(0.0, 0.0), (0.3, -0.2), (-0.5, 0.45)] {
            assert_eq!(k.distort(x, y), (x, y));
        }
    }

    #[test]
    fn undistort_inverts_distort() {
        let k = realistic().with_distortion(-0.28, 0.09, 0.001, -0.0007, -0.01);
        for &(x, y) in &[(0.0, 0.0), (0.2, -0.1), (-0.35, 0.3)] {
            let (xd, yd) = k.distort(x, y);
            let (xu, yu) = k.undistort(xd, yd);
            assert!((xu - x).abs() < 1e-12 && (yu - y).abs() < 1e-12);
        }
    }

    #[test]
    fn distortion_jacobian_matches_finite_differences() {
        let k = realistic().with_distortion(-0.28, 0.09, 0.001, -0.0007, -0.01);
        let (x, y) = (0.21, -0.17);
        let j = k.distort_jacobian(x, y);
        let h = 1e-6;
        let (xp, yp) = k.distort(x + h, y);
        let (xm, ym) = k.distort(x - h, y);
        assert!(((xp - xm) / (2.0 * h) - j[0][0]).abs() < 1e-8);
        assert!(((yp - ym) / (2.0 * h) - j[1][0]).abs() < 1e-8);
        let (xp, yp) = k.distort(x, y + h);
        let (xm, ym) = k.distort(x, y - h);
        assert!(((xp - xm) / (2.0 * h) - j[0][1]).abs() < 1e-8);
        assert!(((yp - ym) / (2.0 * h) - j[1][1]).abs() < 1e-8);
    }

    #[test]
    fn render_matrix_clip_conventions() {
        let k = simple();
        let m = build_render_matrix(&k);
        let mid = (k.near + k.far) / 2.0;
        let ndc = to_ndc(&m, &Point3::new(0.0, 0.0, mid)).unwrap();
        assert!(ndc.x.abs() < 1e-12 && ndc.y.abs() < 1e-12);
        assert!(ndc.z > -1.0 && ndc.z < 1.0);
        let ndc = to_ndc(&m, &Point3::new(0.0, 0.0, k.near)).unwrap();
        assert!((ndc.z + 1.0).abs() < 1e-12);
        let ndc = to_ndc(&m, &Point3::new(0.0, 0.0, k.far)).unwrap();
        assert!((ndc.z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frustum_basic_cases() {
        let k = simple();
        let f = k.frustum();
        assert!(!clip_visible(&f, &Point3::new(0.0, 0.0, -50.0)));
        assert!(clip_visible(&f, &Point3::new(0.0, 0.0, (k.near + k.far) / 2.0)));
        assert!(!clip_visible(&f, &Point3::new(0.0, 0.0, k.far + 1.0)));
        assert!(!clip_visible(&f, &Point3::new(0.0, 0.0, k.near / 2.0)));
        assert!(!clip_visible(&f, &Point3::new(1000.0, 0.0, 100.0)));
    }

    #[test]
    fn parse_round_trip_and_errors() {
        let k = realistic().with_distortion(-0.2, 0.05, 0.0, 0.0, 0.0);
        let back = CameraIntrinsics::parse(&k.to_text()).unwrap();
        assert_eq!(back, k);
        assert!(CameraIntrinsics::parse("fx 100\n").is_err());
        assert!(CameraIntrinsics::parse("fx abc\n").is_err());
        assert!(CameraIntrinsics::parse(&k.to_text().replace("fx 820", "fx -1")).is_err());
        assert!(CameraIntrinsics::parse(&format!("{}bogus 1\n", k.to_text())).is_err());
    }

    fn arb_camera_point() -> impl Strategy<Value = Point3> {
        (-400.0f64..400.0, -400.0f64..400.0, -50.0f64..450.0).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn frustum_agrees_with_ndc_bounds(p in arb_camera_point()) {
            let k = realistic();
            let inside_ndc = to_ndc(&k.render_matrix(), &p)
                .map(|n| n.x.abs() < 1.0 && n.y.abs() < 1.0 && n.z.abs() < 1.0)
                .unwrap_or(false);
            prop_assert_eq!(clip_visible(&k.frustum(), &p), inside_ndc);
        }

        #[test]
        fn viewport_of_render_matrix_equals_projection(
            u in 0.5f64..639.5,
            v in 0.5f64..479.5,
            z in 5.5f64..399.5,
        ) {
            let k = realistic();
            let p = Point3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
            prop_assert!(k.frustum().contains(&p));
            let ndc = to_ndc(&k.render_matrix(), &p).unwrap();
            let px = k.ndc_to_pixel(&Point2::new(ndc.x, ndc.y));
            let direct = project_point(&k, &p).unwrap();
            prop_assert!((px - direct).norm() < 1e-9);
        }
    }
}
