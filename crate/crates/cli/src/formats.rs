//! On-disk schemas: detection streams, calibration, ground truth, tracker output.
//!
//! Streams are JSON Lines, one record per line. Every reader reports the
//! 1-based line of the first bad record.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::Point3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use skelfuse::model::{CameraModel, DetectionSet, Frame, Skeleton3D, Timestamp, JOINT_COUNT};
use skelfuse::tracker::FusedSnapshot;
use skelfuse::{Error, Result};

/// Value of [`CalibrationFile::extrinsic_convention`]: `p_world = T * p_camera`.
pub const CAMERA_TO_WORLD: &str = "camera_to_world";

/// One joint slot. Invalid joints are written as zeros with `valid: false`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonRecord {
    pub joints: Vec<JointRecord>,
}

/// One camera's world-frame detection set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub camera_id: String,
    pub stamp: f64,
    /// Time the set reached the fusion master; absent for recorded streams,
    /// which are then replayed in file order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival: Option<f64>,
    pub skeletons: Vec<SkeletonRecord>,
}

/// Calibration of every camera in a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    /// Direction of each 16-value row-major `extrinsic`; must be `camera_to_world`.
    #[serde(default = "default_convention")]
    pub extrinsic_convention: String,
    pub cameras: Vec<CameraModel>,
}

fn default_convention() -> String {
    CAMERA_TO_WORLD.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthPerson {
    pub person: usize,
    pub joints: Vec<JointRecord>,
}

/// Ground-truth skeletons of every simulated person at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub stamp: f64,
    pub persons: Vec<TruthPerson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: u64,
    pub joints: Vec<JointRecord>,
    /// Trace of each joint's position covariance, `null` where never measured.
    pub position_variance: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotRecord {
    pub stamp: f64,
    pub tracks: Vec<TrackRecord>,
}

pub fn joints_to_records(s: &Skeleton3D) -> Vec<JointRecord> {
    s.joints
        .iter()
        .enumerate()
        .map(|(id, j)| match j {
            Some(p) => JointRecord {
                id,
                x: p.x,
                y: p.y,
                z: p.z,
                valid: true,
            },
            None => JointRecord {
                id,
                x: 0.0,
                y: 0.0,
                z: 0.0,
                valid: false,
            },
        })
        .collect()
}

/// Rebuilds a world-frame skeleton; joints may be listed in any order or omitted.
pub fn records_to_skeleton(joints: &[JointRecord]) -> std::result::Result<Skeleton3D, String> {
    let mut s = Skeleton3D::empty(Frame::World);
    let mut seen = [false; JOINT_COUNT];
    for j in joints {
        if j.id >= JOINT_COUNT {
            return Err(format!("joint id {} out of range 0..{JOINT_COUNT}", j.id));
        }
        if std::mem::replace(&mut seen[j.id], true) {
            return Err(format!("joint id {} listed twice", j.id));
        }
        if j.valid {
            if !(j.x.is_finite() && j.y.is_finite() && j.z.is_finite()) {
                return Err(format!("joint {} has non-finite coordinates", j.id));
            }
            s.joints[j.id] = Some(Point3::new(j.x, j.y, j.z));
        }
    }
    Ok(s)
}

impl DetectionRecord {
    pub fn from_set(set: &DetectionSet, arrival: Option<f64>) -> Self {
        DetectionRecord {
            camera_id: set.camera_id.clone(),
            stamp: set.stamp.seconds(),
            arrival,
            skeletons: set
                .skeletons
                .iter()
                .map(|s| SkeletonRecord {
                    joints: joints_to_records(s),
                })
                .collect(),
        }
    }

    pub fn to_set(&self) -> std::result::Result<DetectionSet, String> {
        let stamp = Timestamp::new(self.stamp).map_err(|e| e.to_string())?;
        let skeletons = self
            .skeletons
            .iter()
            .map(|s| records_to_skeleton(&s.joints))
            .collect::<std::result::Result<_, _>>()?;
        Ok(DetectionSet {
            camera_id: self.camera_id.clone(),
            stamp,
            skeletons,
        })
    }
}

impl SnapshotRecord {
    pub fn from_snapshot(s: &FusedSnapshot) -> Self {
        SnapshotRecord {
            stamp: s.stamp.seconds(),
            tracks: s
                .tracks
                .iter()
                .map(|t| TrackRecord {
                    track_id: t.track_id.0,
                    joints: joints_to_records(&t.skeleton),
                    position_variance: t.position_variance.to_vec(),
                })
                .collect(),
        }
    }
}

impl CalibrationFile {
    pub fn new(cameras: Vec<CameraModel>) -> Self {
        CalibrationFile {
            extrinsic_convention: default_convention(),
            cameras,
        }
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let calib: CalibrationFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let fail = |message: String| Error::Parse {
            path: path.to_string(),
            line: 0,
            message,
        };
        if calib.extrinsic_convention != CAMERA_TO_WORLD {
            return Err(fail(format!(
                "extrinsic_convention must be `{CAMERA_TO_WORLD}`, got `{}`",
                calib.extrinsic_convention
            )));
        }
        let mut ids = BTreeSet::new();
        for c in &calib.cameras {
            if !ids.insert(c.id.as_str()) {
                return Err(fail(format!("camera `{}` calibrated twice", c.id)));
            }
        }
        Ok(calib)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("calibration serializes");
        s.push('\n');
        s
    }

    pub fn camera(&self, id: &str) -> Option<&CameraModel> {
        self.cameras.iter().find(|c| c.id == id)
    }
}

/// Serializes one record per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        let _ = writeln!(s, "{line}");
    }
    s
}

/// Parses JSON Lines, skipping blank lines.
pub fn from_jsonl<T: DeserializeOwned>(text: &str, path: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads a detection stream and checks that arrival times never decrease.
///
/// Returns `(line, record)` pairs so later failures can still name the line.
pub fn read_stream(text: &str, path: &str) -> Result<Vec<(usize, DetectionRecord)>> {
    let mut out: Vec<(usize, DetectionRecord)> = Vec::new();
    let mut last_arrival = f64::NEG_INFINITY;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            message,
        };
        let rec: DetectionRecord = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        if let Some(a) = rec.arrival {
            if !a.is_finite() {
                return Err(fail("arrival must be finite".into()));
            }
            if a < last_arrival {
                return Err(fail(format!("stream not sorted by arrival ({a} after {last_arrival})")));
            }
            last_arrival = a;
        }
        rec.to_set().map_err(fail)?;
        out.push((i + 1, rec));
    }
    Ok(out)
}
