//! Single-view lifting: 2D skeletons plus depth into world-frame detections.

use crate::error::{Error, Result};
use crate::geometry::{back_project, median_depth, transform_skeleton, NeighborhoodRadius, Pixel};
use crate::model::{CameraModel, DepthMap, DetectionSet, Skeleton2D, Skeleton3D, Timestamp};

/// Lifts one 2D skeleton into the camera frame.
///
/// Joints that are missing in 2D, fall outside the depth image, or have no
/// valid depth nearby become missing 3D joints.
pub fn lift_skeleton(
    s2d: &Skeleton2D,
    dm: &DepthMap,
    cam: &CameraModel,
    radius: NeighborhoodRadius,
) -> Result<Skeleton3D> {
    let mut out = Skeleton3D::empty(cam.frame());
    for (slot, joint) in out.joints.iter_mut().zip(s2d.joints.iter()) {
        let Some(j) = joint else { continue };
        if !(j.x.is_finite() && j.y.is_finite()) {
            continue;
        }
        let px = Pixel::new(j.x, j.y);
        let depth = match median_depth(dm, px, radius) {
            Ok(Some(d)) => d,
            Ok(None) | Err(Error::OutOfBounds { .. }) => continue,
            Err(e) => return Err(e),
        };
        *slot = Some(back_project(px, depth, cam)?);
    }
    Ok(out)
}

/// Per-camera lifting stage that enforces monotonic capture stamps.
#[derive(Debug, Clone)]
pub struct CameraPipeline {
    camera: CameraModel,
    radius: NeighborhoodRadius,
    last_stamp: Option<Timestamp>,
}

impl CameraPipeline {
    pub fn new(camera: CameraModel, radius: NeighborhoodRadius) -> Self {
        CameraPipeline {
            camera,
            radius,
            last_stamp: None,
        }
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn process(&mut self, skeletons: &[Skeleton2D], dm: &DepthMap, stamp: Timestamp) -> Result<DetectionSet> {
        if let Some(prev) = self.last_stamp {
            if stamp < prev {
                return Err(Error::CameraTimeRegression {
                    camera: self.camera.id.clone(),
                    previous: prev.seconds(),
                    stamp: stamp.seconds(),
                });
            }
        }
        let set = make_detection_set(skeletons, dm, &self.camera, stamp, self.radius)?;
        self.last_stamp = Some(stamp);
        Ok(set)
    }
}

/// Lifts and registers every skeleton of one frame, dropping skeletons with no valid joint.
pub fn make_detection_set(
    skeletons: &[Skeleton2D],
    dm: &DepthMap,
    cam: &CameraModel,
    stamp: Timestamp,
    radius: NeighborhoodRadius,
) -> Result<DetectionSet> {
    let mut world = Vec::with_capacity(skeletons.len());
    for s in skeletons {
        let lifted = lift_skeleton(s, dm, cam, radius)?;
        if lifted.is_empty() {
            continue;
        }
        world.push(transform_skeleton(&lifted, cam)?);
    }
    Ok(DetectionSet {
        camera_id: cam.id.clone(),
        stamp,
        skeletons: world,
    })
}
