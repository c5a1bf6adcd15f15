//! Pinhole projection, depth sampling and rigid frame changes.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CameraModel, DepthMap, Frame, Skeleton3D};

/// Continuous pixel coordinates; integer values are pixel centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

impl Pixel {
    pub fn new(x: f64, y: f64) -> Self {
        Pixel { x, y }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Radius of the disk sampled around a pixel when reading depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct NeighborhoodRadius(f64);

impl NeighborhoodRadius {
    pub const DEFAULT_PX: f64 = 3.0;

    pub fn new(px: f64) -> Result<Self> {
        if px > 0.0 && px.is_finite() {
            Ok(NeighborhoodRadius(px))
        } else {
            Err(Error::InvalidRadius(px))
        }
    }

    pub fn pixels(self) -> f64 {
        self.0
    }
}

impl Default for NeighborhoodRadius {
    fn default() -> Self {
        NeighborhoodRadius(Self::DEFAULT_PX)
    }
}

impl TryFrom<f64> for NeighborhoodRadius {
    type Error = Error;

    fn try_from(px: f64) -> Result<Self> {
        NeighborhoodRadius::new(px)
    }
}

impl From<NeighborhoodRadius> for f64 {
    fn from(r: NeighborhoodRadius) -> f64 {
        r.0
    }
}

/// Projects a camera-frame point, returning its pixel and depth.
pub fn project(point_cam: &Point3<f64>, cam: &CameraModel) -> Result<(Pixel, f64)> {
    let z = point_cam.z;
    if !(z > 0.0) {
        return Err(Error::BehindCamera(z));
    }
    let px = Pixel::new(cam.fx * point_cam.x / z + cam.cx, cam.fy * point_cam.y / z + cam.cy);
    Ok((px, z))
}

/// Lifts a pixel with known depth back into the camera frame.
pub fn back_project(p: Pixel, depth: f64, cam: &CameraModel) -> Result<Point3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    Ok(Point3::new(
        (p.x - cam.cx) * depth / cam.fx,
        (p.y - cam.cy) * depth / cam.fy,
        depth,
    ))
}

/// Median of the valid depth samples strictly within `radius` of `p`.
///
/// For an even number of samples the lower middle element is returned, so the
/// result is always an observed depth. `Ok(None)` means the neighborhood held
/// no valid sample.
pub fn median_depth(dm: &DepthMap, p: Pixel, radius: NeighborhoodRadius) -> Result<Option<f64>> {
    let (w, h) = (dm.width(), dm.height());
    if !(p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64) {
        return Err(Error::OutOfBounds {
            x: p.x,
            y: p.y,
            width: w,
            height: h,
        });
    }
    let r = radius.pixels();
    let r2 = r * r;
    let x0 = (p.x - r).floor().max(0.0) as usize;
    let y0 = (p.y - r).floor().max(0.0) as usize;
    let x1 = ((p.x + r).ceil() as usize).min(w - 1);
    let y1 = ((p.y + r).ceil() as usize).min(h - 1);

    let mut samples = Vec::new();
    for y in y0..=y1 {
        let dy = y as f64 - p.y;
        for x in x0..=x1 {
            let dx = x as f64 - p.x;
            if dx * dx + dy * dy < r2 {
                if let Some(d) = dm.valid_at(x, y) {
                    samples.push(d);
                }
            }
        }
    }
    if samples.is_empty() {
        return Ok(None);
    }
    let mid = (samples.len() - 1) / 2;
    let (_, median, _) = samples.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(Some(*median))
}

/// Maps a camera-frame skeleton into the world frame.
pub fn transform_skeleton(s: &Skeleton3D, cam: &CameraModel) -> Result<Skeleton3D> {
    let expected = cam.frame();
    if s.frame != expected {
        return Err(Error::FrameMismatch {
            expected: expected.to_string(),
            found: s.frame.to_string(),
        });
    }
    Ok(Skeleton3D {
        joints: s.joints.map(|j| j.map(|p| cam.camera_to_world(&p))),
        frame: Frame::World,
    })
}
