//! Shared domain types: skeleton topology, cameras, depth maps and detections.
//!
//! Skeletons use a fixed 15-joint topology. The twelve limb joints carry the
//! labels used in evaluation reports; head, neck and chest complete the torso.
//! The chest (index 14) doubles as the association centroid.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of joints in every skeleton.
pub const JOINT_COUNT: usize = 15;

/// Names indexed by joint id.
const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "head",
    "neck",
    "r-shoulder",
    "r-elbow",
    "r-wrist",
    "l-shoulder",
    "l-elbow",
    "l-wrist",
    "r-hip",
    "r-knee",
    "r-ankle",
    "l-hip",
    "l-knee",
    "l-ankle",
    "chest",
];

/// Index of a joint in the fixed skeleton topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct JointId(usize);

impl JointId {
    pub const HEAD: JointId = JointId(0);
    pub const NECK: JointId = JointId(1);
    pub const R_SHOULDER: JointId = JointId(2);
    pub const R_ELBOW: JointId = JointId(3);
    pub const R_WRIST: JointId = JointId(4);
    pub const L_SHOULDER: JointId = JointId(5);
    pub const L_ELBOW: JointId = JointId(6);
    pub const L_WRIST: JointId = JointId(7);
    pub const R_HIP: JointId = JointId(8);
    pub const R_KNEE: JointId = JointId(9);
    pub const R_ANKLE: JointId = JointId(10);
    pub const L_HIP: JointId = JointId(11);
    pub const L_KNEE: JointId = JointId(12);
    pub const L_ANKLE: JointId = JointId(13);
    pub const CHEST: JointId = JointId(14);

    /// The twelve limb joints reported by the evaluation, in report column order.
    pub const LIMBS: [JointId; 12] = [
        Self::R_SHOULDER,
        Self::R_ELBOW,
        Self::R_WRIST,
        Self::L_SHOULDER,
        Self::L_ELBOW,
        Self::L_WRIST,
        Self::R_HIP,
        Self::R_KNEE,
        Self::R_ANKLE,
        Self::L_HIP,
        Self::L_KNEE,
        Self::L_ANKLE,
    ];

    pub fn new(index: usize) -> Result<Self> {
        if index < JOINT_COUNT {
            Ok(JointId(index))
        } else {
            Err(Error::JointOutOfRange(index))
        }
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn name(self) -> &'static str {
        JOINT_NAMES[self.0]
    }

    pub fn all() -> impl Iterator<Item = JointId> {
        (0..JOINT_COUNT).map(JointId)
    }
}

impl TryFrom<usize> for JointId {
    type Error = Error;

    fn try_from(index: usize) -> Result<Self> {
        JointId::new(index)
    }
}

impl From<JointId> for usize {
    fn from(id: JointId) -> usize {
        id.0
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Human-readable name of a joint index.
pub fn joint_name(index: usize) -> Result<&'static str> {
    JointId::new(index).map(JointId::name)
}

/// Seconds on a monotonic clock.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub f64);

impl Timestamp {
    pub fn new(seconds: f64) -> Result<Self> {
        if seconds.is_finite() && seconds >= 0.0 {
            Ok(Timestamp(seconds))
        } else {
            Err(Error::Config(format!("invalid timestamp {seconds}")))
        }
    }

    pub fn seconds(self) -> f64 {
        self.0
    }

    pub fn max(self, other: Timestamp) -> Timestamp {
        if other.0 > self.0 {
            other
        } else {
            self
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rigid transform"));
        }
        let gram = rotation.transpose() * rotation - Matrix3::identity();
        if gram.amax() > ROTATION_TOL {
            return Err(Error::Config(format!(
                "rotation block is not orthonormal (max deviation {:e})",
                gram.amax()
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Config(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Parses 16 row-major entries of a homogeneous 4x4 matrix.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self> {
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::Config(format!(
                "extrinsic bottom row must be [0, 0, 0, 1], got {bottom:?}"
            )));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        RigidTransform::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.to_row_major())
    }

    /// Camera looking from `eye` toward `target` with world +z up.
    ///
    /// The camera frame is x right, y down, z along the optical axis.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-9 {
            return Err(Error::Config("look-at eye and target coincide".into()));
        }
        let z = forward.normalize();
        let right = z.cross(&Vector3::z());
        if right.norm() < 1e-9 {
            return Err(Error::Config("look-at direction is vertical".into()));
        }
        let x = right.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        RigidTransform::new(rotation, eye.coords)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_inverse(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.transpose() * (p.coords - self.translation))
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            translation: -(rt * self.translation),
            rotation: rt,
        }
    }

    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Pinhole intrinsics plus the camera-to-world extrinsic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraModel {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Maps camera-frame points to world-frame points.
    pub extrinsic: RigidTransform,
}

/// On-disk calibration entry; `extrinsic` is 16 row-major values, camera to world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsic: [f64; 16],
}

impl CameraModel {
    pub fn new(
        id: impl Into<String>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        extrinsic: RigidTransform,
    ) -> Result<Self> {
        let id = id.into();
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidCamera {
                camera: id,
                reason: format!("focal lengths must be positive, got fx={fx} fy={fy}"),
            });
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidCamera {
                camera: id,
                reason: "principal point must be finite".into(),
            });
        }
        Ok(CameraModel {
            id,
            fx,
            fy,
            cx,
            cy,
            extrinsic,
        })
    }

    pub fn frame(&self) -> Frame {
        Frame::Camera(self.id.clone())
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.extrinsic.apply_inverse(p)
    }

    pub fn camera_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.extrinsic.apply(p)
    }
}

impl TryFrom<CameraRecord> for CameraModel {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        let extrinsic = RigidTransform::from_row_major(&r.extrinsic).map_err(|e| Error::InvalidCamera {
            camera: r.id.clone(),
            reason: e.to_string(),
        })?;
        CameraModel::new(r.id, r.fx, r.fy, r.cx, r.cy, extrinsic)
    }
}

impl From<CameraModel> for CameraRecord {
    fn from(c: CameraModel) -> Self {
        CameraRecord {
            extrinsic: c.extrinsic.to_row_major(),
            id: c.id,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
        }
    }
}

/// A detected 2D joint in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Joint2D {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// One person's 2D detection; `None` marks a joint the detector did not report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Skeleton2D {
    pub joints: [Option<Joint2D>; JOINT_COUNT],
}

impl Skeleton2D {
    pub fn valid_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }
}

/// Coordinate frame a 3D skeleton is expressed in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Camera(String),
    World,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Camera(id) => write!(f, "camera({id})"),
            Frame::World => f.write_str("world"),
        }
    }
}

/// One person's 3D joints in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton3D {
    pub joints: [Option<Point3<f64>>; JOINT_COUNT],
    pub frame: Frame,
}

impl Skeleton3D {
    pub fn empty(frame: Frame) -> Self {
        Skeleton3D {
            joints: [None; JOINT_COUNT],
            frame,
        }
    }

    pub fn joint(&self, id: JointId) -> Option<Point3<f64>> {
        self.joints[id.index()]
    }

    pub fn valid_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_count() == 0
    }

    pub fn validity_mask(&self) -> [bool; JOINT_COUNT] {
        self.joints.map(|j| j.is_some())
    }
}

/// Row-major depth image in metres; `0` and `NaN` mean no reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::DepthMapSize {
                expected: width * height,
                got: values.len(),
            });
        }
        Ok(DepthMap {
            width,
            height,
            values,
        })
    }

    /// A map with every sample missing.
    pub fn empty(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        DepthMap {
            width,
            height,
            values: vec![depth; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        self.values[y * self.width + x] = depth;
    }

    /// Returns the sample if it is a usable depth reading.
    pub fn valid_at(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.get(x, y);
        (d.is_finite() && d > 0.0).then_some(d)
    }
}

/// One camera's skeletons at one capture time, in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub camera_id: String,
    pub stamp: Timestamp,
    pub skeletons: Vec<Skeleton3D>,
}
