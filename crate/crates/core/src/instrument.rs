//! Wrist kinematics of an articulated instrument and backward placement of
//! its four rigid components (shaft, body, two jaws) from the end-effector.
//!
//! Frames, using modified (Craig) Denavit-Hartenberg rows:
//!
//! * `sh`: shaft frame; z runs along the shaft toward the tip.
//! * `b`: body frame, `sh · DH(q6)`; z is the q6 axis, x points at the q7 axis.
//! * `w`: wrist frame, `b · DH(q7) · R_tool`; oriented like the end-effector
//!   with its origin on the q7 axis. The z axis of `b · DH(q7)` is the q7 axis.
//! * `psm`: end-effector, `w · Trans(R_toolᵀ t_tool)`.
//!
//! The jaws rotate about `jaw_axis` (wrist frame) by ±θ_J/2.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::formats::{parse_f64, parse_floats, records, write_floats};
use crate::geometry::{Point3, RigidTransform};

/// One modified-DH row: `RotX(alpha) · TransX(a) · RotZ(q + theta_offset) · TransZ(d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhRow {
    /// mm
    pub a: f64,
    /// rad
    pub alpha: f64,
    /// mm
    pub d: f64,
    /// rad
    pub theta_offset: f64,
}

impl DhRow {
    pub fn transform(&self, q: f64) -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::x(), self.alpha)
            * RigidTransform::from_translation(Vector3::new(self.a, 0.0, 0.0))
            * RigidTransform::from_axis_angle(Vector3::z(), q + self.theta_offset)
            * RigidTransform::from_translation(Vector3::new(0.0, 0.0, self.d))
    }

    /// Closed-form homogeneous matrix of the same row.
    pub fn matrix(&self, q: f64) -> Matrix4<f64> {
        let (st, ct) = (q + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct, -st, 0.0, self.a,
            st * ca, ct * ca, -sa, -sa * self.d,
            st * sa, ct * sa, ca, ca * self.d,
            0.0, 0.0, 0.0, 1.0,
        )
    }
}

/// Wrist joint values, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    pub q6: f64,
    pub q7: f64,
    pub theta_j: f64,
}

impl JointState {
    pub fn new(q6: f64, q7: f64, theta_j: f64) -> Self {
        Self { q6, q7, theta_j }
    }
}

/// Inclusive joint range, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub lower: f64,
    pub upper: f64,
}

impl Limits {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Which rigid component a pose or vertex set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    LeftJaw,
    RightJaw,
    Body,
    Shaft,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::LeftJaw, Component::RightJaw, Component::Body, Component::Shaft];

    pub fn name(self) -> &'static str {
        match self {
            Component::LeftJaw => "left_jaw",
            Component::RightJaw => "right_jaw",
            Component::Body => "body",
            Component::Shaft => "shaft",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown component `{s}`")))
    }
}

/// Scene-frame poses of the four components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentPoses {
    pub left_jaw: RigidTransform,
    pub right_jaw: RigidTransform,
    pub body: RigidTransform,
    pub shaft: RigidTransform,
}

impl ComponentPoses {
    pub fn get(&self, c: Component) -> &RigidTransform {
        match c {
            Component::LeftJaw => &self.left_jaw,
            Component::RightJaw => &self.right_jaw,
            Component::Body => &self.body,
            Component::Shaft => &self.shaft,
        }
    }

    pub fn map(&self, f: impl Fn(&RigidTransform) -> RigidTransform) -> Self {
        Self {
            left_jaw: f(&self.left_jaw),
            right_jaw: f(&self.right_jaw),
            body: f(&self.body),
            shaft: f(&self.shaft),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentModel {
    pub name: String,
    /// Rows for q6 (shaft to body) and q7 (body to yaw link).
    pub dh: [DhRow; 2],
    /// Fixed rotation and translation from the q7 link frame to the end-effector.
    pub tool_rotation: Matrix3<f64>,
    pub tool_translation: Vector3<f64>,
    /// Unit axis of the jaw split, wrist frame.
    pub jaw_axis: Vector3<f64>,
    pub q6_limits: Limits,
    pub q7_limits: Limits,
    pub jaw_limits: Limits,
    /// Local vertex sets in component order: left jaw, right jaw, body, shaft.
    pub vertices: [Vec<Point3>; 4],
    /// Optional OBJ meshes replacing the proxies, same order.
    pub mesh_paths: [Option<PathBuf>; 4],
}

fn cylinder(radius: f64, z0: f64, z1: f64, segments: usize) -> Vec<Point3> {
    let mut out = Vec::with_capacity(2 * segments);
    for z in [z0, z1] {
        for i in 0..segments {
            let t = i as f64 / segments as f64 * std::f64::consts::TAU;
            out.push(Point3::new(radius * t.cos(), radius * t.sin(), z));
        }
    }
    out
}

fn cuboid(min: Vector3<f64>, max: Vector3<f64>) -> Vec<Point3> {
    (0..8)
        .map(|i| {
            Point3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        })
        .collect()
}

/// A wedge from the pivot to the tip along +z, thick along `side`.
fn wedge(length: f64, half_width: f64, side: f64) -> Vec<Point3> {
    vec![
        Point3::new(-half_width, 0.0, 0.0),
        Point3::new(half_width, 0.0, 0.0),
        Point3::new(-half_width, side * 1.5, 0.0),
        Point3::new(half_width, side * 1.5, 0.0),
        Point3::new(-half_width * 0.5, 0.0, length),
        Point3::new(half_width * 0.5, 0.0, length),
        Point3::new(0.0, side * 0.5, length),
    ]
}

impl Default for InstrumentModel {
    /// Large needle driver wrist: 9.1 mm pitch-to-yaw link, 10.2 mm jaw.
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_2;
        let tool = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0);
        Self {
            name: "large_needle_driver".into(),
            dh: [
                DhRow { a: 0.0, alpha: -FRAC_PI_2, d: 0.0, theta_offset: -FRAC_PI_2 },
                DhRow { a: 9.1, alpha: -FRAC_PI_2, d: 0.0, theta_offset: -FRAC_PI_2 },
            ],
            tool_rotation: tool,
            tool_translation: Vector3::new(0.0, 10.2, 0.0),
            jaw_axis: Vector3::x(),
            q6_limits: Limits::new(-FRAC_PI_2, FRAC_PI_2),
            q7_limits: Limits::new(-FRAC_PI_2, FRAC_PI_2),
            jaw_limits: Limits::new(0.0, FRAC_PI_2),
            vertices: [
                wedge(10.2, 1.2, 1.0),
                wedge(10.2, 1.2, -1.0),
                cuboid(Vector3::new(0.0, -2.5, -2.5), Vector3::new(9.1, 2.5, 2.5)),
                cylinder(4.0, -60.0, 0.0, 12),
            ],
            mesh_paths: [None, None, None, None],
        }
    }
}

impl InstrumentModel {
    pub fn validate(&self) -> Result<()> {
        let finite = self.dh.iter().all(|r| [r.a, r.alpha, r.d, r.theta_offset].iter().all(|v| v.is_finite()))
            && self.tool_translation.iter().all(|v| v.is_finite())
            && self.jaw_axis.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("instrument parameters must be finite".into()));
        }
        if (self.jaw_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation("jaw axis must be a unit vector".into()));
        }
        for (name, l) in [("q6", self.q6_limits), ("q7", self.q7_limits), ("jaw", self.jaw_limits)] {
            if !(l.lower <= l.upper) {
                return Err(Error::Validation(format!("{name} limits are empty")));
            }
        }
        if self.jaw_limits.lower < 0.0 {
            return Err(Error::Validation("jaw lower limit must be non-negative".into()));
        }
        for (c, v) in Component::ALL.iter().zip(&self.vertices) {
            if v.is_empty() || v.iter().any(|p| !p.coords.iter().all(|x| x.is_finite())) {
                return Err(Error::Validation(format!("{} vertex set is empty or not finite", c.name())));
            }
        }
        Ok(())
    }

    pub fn check_joints(&self, j: &JointState) -> Result<()> {
        if j.theta_j < 0.0 {
            return Err(Error::Validation(format!("jaw angle {} rad is negative", j.theta_j)));
        }
        for (name, v, l) in [
            ("q6", j.q6, self.q6_limits),
            ("q7", j.q7, self.q7_limits),
            ("jaw", j.theta_j, self.jaw_limits),
        ] {
            if !l.contains(v) {
                return Err(Error::Validation(format!(
                    "{name} = {v} rad outside [{}, {}]",
                    l.lower, l.upper
                )));
            }
        }
        Ok(())
    }

    pub fn vertices(&self, c: Component) -> &[Point3] {
        &self.vertices[c.index()]
    }

    /// `ᵇT_w(q7)`: body frame to wrist frame.
    pub fn body_to_wrist(&self, q7: f64) -> RigidTransform {
        self.dh[1].transform(q7) * RigidTransform::from_matrix_parts(&self.tool_rotation, Vector3::zeros())
    }

    /// `ˢʰT_b(q6)`: shaft frame to body frame.
    pub fn shaft_to_body(&self, q6: f64) -> RigidTransform {
        self.dh[0].transform(q6)
    }

    /// `ᵖˢᵐT_w`: the end-effector to wrist-centre offset, a pure translation.
    pub fn psm_to_wrist(&self) -> RigidTransform {
        RigidTransform::from_translation(-(self.tool_rotation.transpose() * self.tool_translation))
    }

    /// Reads the instrument config. Unlisted keys keep their defaults.
    ///
    /// ```text
    /// name large_needle_driver
    /// dh q6 <a mm> <alpha rad> <d mm> <theta_offset rad>
    /// dh q7 <a> <alpha> <d> <theta_offset>
    /// tool_rotation <r00 r01 r02 r10 r11 r12 r20 r21 r22>
    /// tool_translation <x y z mm>
    /// jaw_axis <x y z>
    /// limit q6|q7|jaw <lower rad> <upper rad>
    /// mesh left_jaw|right_jaw|body|shaft <path to .obj>
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (line, tokens) in records(text) {
            let rest = &tokens[1..];
            match tokens[0] {
                "name" if rest.len() == 1 => m.name = rest[0].to_string(),
                "dh" if !rest.is_empty() => {
                    let v = parse_floats::<4>(&rest[1..], line)?;
                    let row = DhRow { a: v[0], alpha: v[1], d: v[2], theta_offset: v[3] };
                    match rest[0] {
                        "q6" => m.dh[0] = row,
                        "q7" => m.dh[1] = row,
                        other => return Err(Error::parse(line, format!("unknown joint `{other}`"))),
                    }
                }
                "tool_rotation" => {
                    let v = parse_floats::<9>(rest, line)?;
                    let r = Matrix3::from_row_slice(&v);
                    if (r.transpose() * r - Matrix3::identity()).norm() > 1e-9 || r.determinant() < 0.0 {
                        return Err(Error::parse(line, "tool rotation is not a proper rotation"));
                    }
                    m.tool_rotation = r;
                }
                "tool_translation" => m.tool_translation = parse_floats::<3>(rest, line)?.into(),
                "jaw_axis" => m.jaw_axis = parse_floats::<3>(rest, line)?.into(),
                "limit" if rest.len() == 3 => {
                    let l = Limits::new(parse_f64(rest[1], line)?, parse_f64(rest[2], line)?);
                    match rest[0] {
                        "q6" => m.q6_limits = l,
                        "q7" => m.q7_limits = l,
                        "jaw" => m.jaw_limits = l,
                        other => return Err(Error::parse(line, format!("unknown joint `{other}`"))),
                    }
                }
                "mesh" if rest.len() == 2 => {
                    let c: Component = rest[0].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
                    m.mesh_paths[c.index()] = Some(PathBuf::from(rest[1]));
                }
                other => return Err(Error::parse(line, format!("unrecognised entry `{other}`"))),
            }
        }
        m.validate().map_err(|e| Error::parse(0, e.to_string()))?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# ghostline instrument v1 (mm, rad)\n");
        out.push_str(&format!("name {}\n", self.name));
        for (joint, row) in ["q6", "q7"].iter().zip(&self.dh) {
            out.push_str(&format!("dh {joint} "));
            write_floats(&mut out, &[row.a, row.alpha, row.d, row.theta_offset]);
            out.push('\n');
        }
        out.push_str("tool_rotation ");
        let r = self.tool_rotation;
        let flat: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| r[(i, j)]).collect();
        write_floats(&mut out, &flat);
        out.push_str("\ntool_translation ");
        write_floats(&mut out, self.tool_translation.as_slice());
        out.push_str("\njaw_axis ");
        write_floats(&mut out, self.jaw_axis.as_slice());
        out.push('\n');
        for (joint, l) in [("q6", self.q6_limits), ("q7", self.q7_limits), ("jaw", self.jaw_limits)] {
            out.push_str(&format!("limit {joint} "));
            write_floats(&mut out, &[l.lower, l.upper]);
            out.push('\n');
        }
        for (c, p) in Component::ALL.iter().zip(&self.mesh_paths) {
            if let Some(p) = p {
                out.push_str(&format!("mesh {} {}\n", c.name(), p.display()));
            }
        }
        out
    }

    /// Replaces proxy vertex sets with the configured meshes. Relative mesh
    /// paths resolve against `base_dir`.
    pub fn load_meshes(&mut self, base_dir: &Path) -> std::io::Result<()> {
        for (slot, path) in self.vertices.iter_mut().zip(&self.mesh_paths) {
            if let Some(path) = path {
                let text = std::fs::read_to_string(base_dir.join(path))?;
                *slot = parse_obj_vertices(&text)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Vertex positions (`v x y z` lines) of a Wavefront OBJ file.
pub fn parse_obj_vertices(text: &str) -> Result<Vec<Point3>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some("v") {
            continue;
        }
        let tokens: Vec<&str> = tokens.take(3).collect();
        let v = parse_floats::<3>(&tokens, i + 1)?;
        out.push(Point3::new(v[0], v[1], v[2]));
    }
    if out.is_empty() {
        return Err(Error::Validation("mesh has no vertices".into()));
    }
    Ok(out)
}

/// Jaw frames relative to the wrist: rotations of `+θ_J/2` (left) and
/// `−θ_J/2` (right) about the jaw axis.
pub fn jaw_split(theta_j: f64, m: &InstrumentModel) -> Result<(RigidTransform, RigidTransform)> {
    if !(theta_j >= 0.0) {
        return Err(Error::Validation(format!("jaw angle {theta_j} rad is negative")));
    }
    Ok((
        RigidTransform::from_axis_angle(m.jaw_axis, theta_j / 2.0),
        RigidTransform::from_axis_angle(m.jaw_axis, -theta_j / 2.0),
    ))
}

/// Places the four components by walking backward from the end-effector pose:
///
/// * jaws: `pose · ᵖˢᵐT_w · ʷT_J(±θ_J/2)`
/// * body: `pose · ᵖˢᵐT_w · ᵇT_w(q7)⁻¹`
/// * shaft: `body · ˢʰT_b(q6)⁻¹`
pub fn place_components(pose: &RigidTransform, j: &JointState, m: &InstrumentModel) -> Result<ComponentPoses> {
    m.check_joints(j)?;
    let wrist = *pose * m.psm_to_wrist();
    let (left, right) = jaw_split(j.theta_j, m)?;
    let body = wrist * m.body_to_wrist(j.q7).inverse();
    let shaft = body * m.shaft_to_body(j.q6).inverse();
    Ok(ComponentPoses {
        left_jaw: wrist * left,
        right_jaw: wrist * right,
        body,
        shaft,
    })
}

/// Forward chain from the shaft frame to the end-effector, multiplied out
/// in homogeneous matrices.
pub fn forward_wrist(shaft_pose: &RigidTransform, j: &JointState, m: &InstrumentModel) -> Result<RigidTransform> {
    m.check_joints(j)?;
    let mut tool = Matrix4::identity();
    tool.fixed_view_mut::<3, 3>(0, 0).copy_from(&m.tool_rotation);
    tool.fixed_view_mut::<3, 1>(0, 3).copy_from(&m.tool_translation);
    let h = shaft_pose.to_matrix() * m.dh[0].matrix(j.q6) * m.dh[1].matrix(j.q7) * tool;
    Ok(RigidTransform::from_matrix_parts(
        &h.fixed_view::<3, 3>(0, 0).into_owned(),
        h.fixed_view::<3, 1>(0, 3).into_owned(),
    ))
}
