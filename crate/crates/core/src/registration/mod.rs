//! Occlusion-robust scene registration: fiducial detections are pooled over
//! several frames, gated on a detection count, then handed to robust PnP.

mod pnp;

use std::collections::BTreeMap;

pub use pnp::{p3p, solve_pnp, PnpSolution, MIN_CORRESPONDENCES};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::formats::{parse_floats, records, write_floats};
use crate::geometry::{Point2, Point3};
use crate::robust::RobustConfig;

pub type MarkerId = u32;

/// Corner order used everywhere: top-left, top-right, bottom-right,
/// bottom-left in the marker's own frame.
pub type Corners3 = [Point3; 4];
pub type Corners2 = [Point2; 4];

/// Marker label to its four corners in the scene frame, mm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FiducialMap {
    entries: BTreeMap<MarkerId, Corners3>,
}

fn check_marker(corners: &Corners3) -> Result<()> {
    if corners.iter().any(|c| !c.coords.iter().all(|v| v.is_finite())) {
        return Err(Error::Validation("marker corner is not finite".into()));
    }
    let normal = (corners[2] - corners[0]).cross(&(corners[3] - corners[1]));
    let n = normal.norm();
    if n <= 1e-12 {
        return Err(Error::Validation("marker corners span no area".into()));
    }
    let normal = normal / n;
    let centroid = corners.iter().map(|c| c.coords).sum::<nalgebra::Vector3<f64>>() / 4.0;
    for c in corners {
        let off = (c.coords - centroid).dot(&normal).abs();
        if off > 1e-6 {
            return Err(Error::Validation(format!(
                "marker corners are not coplanar ({off:e} mm off plane)"
            )));
        }
    }
    Ok(())
}

impl FiducialMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: MarkerId, corners: Corners3) -> Result<()> {
        check_marker(&corners)?;
        if self.entries.contains_key(&label) {
            return Err(Error::Validation(format!("duplicate marker label {label}")));
        }
        self.entries.insert(label, corners);
        Ok(())
    }

    pub fn get(&self, label: MarkerId) -> Option<&Corners3> {
        self.entries.get(&label)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = MarkerId> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (MarkerId, &Corners3)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// One marker per line: `label x0 y0 z0 x1 y1 z1 x2 y2 z2 x3 y3 z3`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::new();
        for (line, tokens) in records(text) {
            let Some((head, rest)) = tokens.split_first() else {
                continue;
            };
            let label: MarkerId = head
                .parse()
                .map_err(|_| Error::parse(line, format!("bad marker label `{head}`")))?;
            let v = parse_floats::<12>(rest, line)?;
            let corners = std::array::from_fn(|i| Point3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]));
            map.insert(label, corners)
                .map_err(|e| Error::parse(line, e.to_string()))?;
        }
        Ok(map)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# label x0 y0 z0 x1 y1 z1 x2 y2 z2 x3 y3 z3 (mm; TL TR BR BL)\n");
        for (label, corners) in &self.entries {
            out.push_str(&label.to_string());
            out.push(' ');
            let flat: Vec<f64> = corners.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
            write_floats(&mut out, &flat);
            out.push('\n');
        }
        out
    }
}

/// One detected marker: label and its four pixel corners.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: MarkerId,
    pub corners: Corners2,
}

/// All detections from one image frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionBatch {
    pub detections: Vec<Detection>,
}

impl DetectionBatch {
    pub fn new(detections: Vec<Detection>) -> Self {
        Self { detections }
    }
}

/// Detections file: `frame label u0 v0 u1 v1 u2 v2 u3 v3` per detection;
/// a line holding only `frame` records a frame with nothing detected.
/// Frame indices must be non-decreasing; gaps are not filled.
pub fn parse_detections(text: &str) -> Result<Vec<DetectionBatch>> {
    let mut frames: Vec<(u64, DetectionBatch)> = Vec::new();
    for (line, tokens) in records(text) {
        let frame: u64 = tokens[0]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad frame index `{}`", tokens[0])))?;
        match frames.last() {
            Some((last, _)) if frame < *last => {
                return Err(Error::parse(line, "frame indices must not decrease"));
            }
            Some((last, _)) if frame == *last => {}
            _ => frames.push((frame, DetectionBatch::default())),
        }
        if tokens.len() == 1 {
            continue;
        }
        let label: MarkerId = tokens[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("bad marker label `{}`", tokens[1])))?;
        let v = parse_floats::<8>(&tokens[2..], line)?;
        let corners = std::array::from_fn(|i| Point2::new(v[2 * i], v[2 * i + 1]));
        frames.last_mut().expect("frame pushed above").1.detections.push(Detection { label, corners });
    }
    Ok(frames.into_iter().map(|(_, b)| b).collect())
}

pub fn write_detections(frames: &[DetectionBatch]) -> String {
    let mut out = String::from("# frame label u0 v0 u1 v1 u2 v2 u3 v3 (px; TL TR BR BL)\n");
    for (i, batch) in frames.iter().enumerate() {
        if batch.detections.is_empty() {
            out.push_str(&format!("{i}\n"));
        }
        for d in &batch.detections {
            out.push_str(&format!("{i} {} ", d.label));
            let flat: Vec<f64> = d.corners.iter().flat_map(|c| [c.x, c.y]).collect();
            write_floats(&mut out, &flat);
            out.push('\n');
        }
    }
    out
}

/// Pooled image/scene correspondences and the number of accepted markers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub image: Vec<Point2>,
    pub scene: Vec<Point3>,
    pub n_detect: usize,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub n_frame_thres: usize,
    pub n_detect_thres: usize,
    pub robust: RobustConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            n_frame_thres: 10,
            n_detect_thres: 10,
            robust: RobustConfig::pnp(),
        }
    }
}

/// Pools the first `n_frame_thres` frames. Detections whose label is not in
/// the map are skipped; every accepted marker contributes four pairs.
pub fn accumulate(frames: &[DetectionBatch], map: &FiducialMap, n_frame_thres: usize) -> CorrespondenceSet {
    let mut set = CorrespondenceSet::default();
    for batch in frames.iter().take(n_frame_thres) {
        for d in &batch.detections {
            let Some(corners) = map.get(d.label) else {
                continue;
            };
            set.image.extend_from_slice(&d.corners);
            set.scene.extend_from_slice(corners);
            set.n_detect += 1;
        }
    }
    set
}

/// Robust PnP behind the detection-count gate.
pub fn solve_pnp_robust(
    c: &CorrespondenceSet,
    k: &CameraIntrinsics,
    cfg: &RegistrationConfig,
) -> Result<PnpSolution> {
    if c.n_detect < cfg.n_detect_thres {
        return Err(Error::InsufficientDetections {
            got: c.n_detect,
            needed: cfg.n_detect_thres,
        });
    }
    solve_pnp(&c.image, &c.scene, k, &cfg.robust)
}

/// Registration result: the camera-from-scene pose plus what fed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub solution: PnpSolution,
    pub n_detect: usize,
    pub n_points: usize,
}

impl Registration {
    pub fn pose(&self) -> &crate::geometry::RigidTransform {
        &self.solution.pose
    }
}

/// accumulate, gate, solve.
pub fn register_scene(
    frames: &[DetectionBatch],
    map: &FiducialMap,
    k: &CameraIntrinsics,
    cfg: &RegistrationConfig,
) -> Result<Registration> {
    if cfg.n_frame_thres == 0 {
        return Err(Error::Validation("frame threshold must be at least 1".into()));
    }
    let c = accumulate(frames, map, cfg.n_frame_thres);
    let solution = solve_pnp_robust(&c, k, cfg)?;
    Ok(Registration {
        solution,
        n_detect: c.n_detect,
        n_points: c.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use nalgebra::Vector3;

    fn square(center: Point3, side: f64, tilt: f64) -> Corners3 {
        let r = RigidTransform::from_axis_angle(Vector3::x(), tilt);
        let h = side / 2.0;
        [(-h, -h), (h, -h), (h, h), (-h, h)].map(|(x, y)| center + r.transform_vector(&Vector3::new(x, y, 0.0)))
    }

    fn map() -> FiducialMap {
        let mut m = FiducialMap::new();
        m.insert(3, square(Point3::new(-30.0, -20.0, 0.0), 20.0, 0.0)).unwrap();
        m.insert(7, square(Point3::new(30.0, -15.0, 5.0), 20.0, 0.3)).unwrap();
        m.insert(11, square(Point3::new(0.0, 30.0, -8.0), 20.0, -0.2)).unwrap();
        m
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(900.0, 900.0, 320.0, 240.0, 640.0, 480.0).with_distortion(-0.1, 0.02, 0.001, -0.001, 0.0)
    }

    fn truth() -> RigidTransform {
        RigidTransform::from_rotation_vector(Vector3::new(2.8, 0.2, -0.1), Vector3::new(5.0, -3.0, 180.0))
    }

    fn observe(labels: &[MarkerId], frames: usize) -> Vec<DetectionBatch> {
        let m = map();
        let k = camera();
        let batch = DetectionBatch::new(
            labels
                .iter()
                .map(|&l| Detection {
                    label: l,
                    corners: m
                        .get(l)
                        .map(|c| c.map(|p| k.project(&truth().transform_point(&p)).unwrap()))
                        .unwrap_or([Point2::new(100.0, 100.0); 4]),
                })
                .collect(),
        );
        vec![batch; frames]
    }

    #[test]
    fn accumulate_counts() {
        let c = accumulate(&observe(&[3], 10), &map(), 10);
        assert_eq!((c.len(), c.n_detect), (40, 10));
        let c = accumulate(&observe(&[99], 10), &map(), 10);
        assert_eq!((c.len(), c.n_detect), (0, 0));
        let c = accumulate(&observe(&[3, 7, 11], 10), &map(), 10);
        assert_eq!((c.len(), c.n_detect), (120, 30));
        // frames beyond the threshold are not consumed
        let c = accumulate(&observe(&[3, 7], 15), &map(), 10);
        assert_eq!(c.n_detect, 20);
    }

    #[test]
    fn noiseless_registration_is_exact() {
        let reg = register_scene(&observe(&[3, 7, 11], 10), &map(), &camera(), &RegistrationConfig::default()).unwrap();
        assert!(reg.pose().angle_to(&truth()) < 1e-6);
        assert!(reg.pose().distance_to(&truth()) < 1e-6);
        assert!(reg.solution.rms_residual < 1e-6);
    }

    #[test]
    fn single_marker_matches_all_markers() {
        let cfg = RegistrationConfig::default();
        let one = register_scene(&observe(&[7], 10), &map(), &camera(), &cfg).unwrap();
        let all = register_scene(&observe(&[3, 7, 11], 1), &map(), &camera(), &RegistrationConfig { n_detect_thres: 3, ..cfg }).unwrap();
        assert!(one.pose().angle_to(all.pose()) < 1e-6);
        assert!(one.pose().distance_to(all.pose()) < 1e-6);
    }

    #[test]
    fn detection_gate() {
        let cfg = RegistrationConfig::default();
        let err = register_scene(&observe(&[3], 9), &map(), &camera(), &cfg).unwrap_err();
        assert_eq!(err, Error::InsufficientDetections { got: 9, needed: 10 });
        let err = register_scene(&vec![DetectionBatch::default(); 10], &map(), &camera(), &cfg).unwrap_err();
        assert!(matches!(err, Error::InsufficientDetections { got: 0, .. }));
    }

    #[test]
    fn permutation_does_not_change_solution() {
        let c = accumulate(&observe(&[3, 7, 11], 1), &map(), 10);
        let mut rev = c.clone();
        rev.image.reverse();
        rev.scene.reverse();
        let cfg = RegistrationConfig { n_detect_thres: 1, ..Default::default() };
        let a = solve_pnp_robust(&c, &camera(), &cfg).unwrap();
        let b = solve_pnp_robust(&rev, &camera(), &cfg).unwrap();
        assert!(a.pose.angle_to(&b.pose) < 1e-6 && a.pose.distance_to(&b.pose) < 1e-6);
    }

    #[test]
    fn map_rejects_bent_marker() {
        let mut c = square(Point3::origin(), 10.0, 0.0);
        c[2].z += 1e-3;
        assert!(FiducialMap::new().insert(1, c).is_err());
        let mut m = map();
        assert!(m.insert(3, square(Point3::origin(), 10.0, 0.0)).is_err());
    }

    #[test]
    fn file_round_trips() {
        let m = map();
        assert_eq!(FiducialMap::parse(&m.to_text()).unwrap(), m);

        let mut frames = observe(&[3, 99], 3);
        frames.insert(1, DetectionBatch::default());
        let text = write_detections(&frames);
        let parsed = parse_detections(&text).unwrap();
        assert_eq!(parsed, frames);
        assert_eq!(write_detections(&parsed), text);

        assert!(matches!(parse_detections("0 1 2 3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_detections("2\n1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(FiducialMap::parse("x 1 2 3\n").is_err());
    }
}
