//! Deterministic simulation of an unsynchronised RGB-D camera network.
//!
//! People follow timed waypoint paths with a rigid torso and swinging limbs.
//! Every camera renders noisy 2D skeletons plus a sparse depth image, lifts
//! them through the regular single-view pipeline, and delivers the resulting
//! detection sets with its own frame rate, phase and latency jitter.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, NeighborhoodRadius, Pixel};
use crate::lifting::CameraPipeline;
use crate::model::{
    CameraModel, DepthMap, DetectionSet, Frame, Joint2D, JointId, RigidTransform, Skeleton2D, Skeleton3D, Timestamp,
    JOINT_COUNT,
};

/// One timed waypoint `[t, x, y]` of a person's ground path.
pub type Waypoint = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonSpec {
    /// Piecewise-linear chest path; held constant outside the covered times.
    pub waypoints: Vec<Waypoint>,
    /// Facing direction in the world xy plane, degrees from +x.
    #[serde(default)]
    pub heading_deg: f64,
    /// Peak arm swing; legs swing at 60% of it. Zero gives a rigid pose.
    #[serde(default = "default_swing_amplitude")]
    pub swing_amplitude_deg: f64,
    #[serde(default = "default_swing_frequency")]
    pub swing_frequency_hz: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

fn default_swing_amplitude() -> f64 {
    25.0
}

fn default_swing_frequency() -> f64 {
    1.0
}

/// A simulated sensor as written in a scenario file.
///
/// Placement is either a full `extrinsic` (16 row-major values, camera to
/// world) or an `eye`/`target` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsic: Option<[f64; 16]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eye: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<[f64; 3]>,
    pub frame_rate: f64,
    /// Capture time of the first frame.
    #[serde(default)]
    pub start_offset: f64,
    /// Uniform latency bounds `[min, max]` in seconds.
    #[serde(default)]
    pub jitter: [f64; 2],
    #[serde(default)]
    pub pixel_noise: f64,
    #[serde(default)]
    pub depth_noise: f64,
    #[serde(default)]
    pub joint_dropout: f64,
    #[serde(default)]
    pub detection_dropout: f64,
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration: f64,
    /// Radius of the depth disk painted around each joint.
    #[serde(default = "default_splat_radius")]
    pub depth_splat_radius_px: f64,
    /// Neighborhood radius the camera nodes use for median depth.
    #[serde(default = "default_neighborhood")]
    pub neighborhood_radius_px: f64,
    pub persons: Vec<PersonSpec>,
    pub cameras: Vec<CameraConfig>,
}

fn default_splat_radius() -> f64 {
    5.0
}

fn default_neighborhood() -> f64 {
    NeighborhoodRadius::DEFAULT_PX
}

/// A validated camera with its simulation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSpec {
    pub model: CameraModel,
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
    pub start_offset: f64,
    pub jitter: [f64; 2],
    pub pixel_noise: f64,
    pub depth_noise: f64,
    pub joint_dropout: f64,
    pub detection_dropout: f64,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl CameraConfig {
    pub fn resolve(&self) -> Result<CameraSpec> {
        let id = &self.id;
        let extrinsic = match (&self.extrinsic, &self.eye, &self.target) {
            (Some(m), None, None) => RigidTransform::from_row_major(m)?,
            (None, Some(eye), Some(target)) => {
                RigidTransform::look_at(Point3::from(*eye), Point3::from(*target))?
            }
            _ => {
                return Err(Error::Config(format!(
                    "camera `{id}`: give either `extrinsic` or both `eye` and `target`"
                )))
            }
        };
        let model = CameraModel::new(id.clone(), self.fx, self.fy, self.cx, self.cy, extrinsic)?;
        check(self.width > 0 && self.height > 0, || format!("camera `{id}`: image size must be positive"))?;
        check(self.frame_rate > 0.0 && self.frame_rate.is_finite(), || {
            format!("camera `{id}`: frame_rate must be positive")
        })?;
        check(self.start_offset >= 0.0, || format!("camera `{id}`: start_offset must be >= 0"))?;
        let [lo, hi] = self.jitter;
        check(lo >= 0.0 && hi >= lo && hi.is_finite(), || {
            format!("camera `{id}`: jitter must satisfy 0 <= min <= max")
        })?;
        check(self.pixel_noise >= 0.0 && self.depth_noise >= 0.0, || {
            format!("camera `{id}`: noise sigmas must be >= 0")
        })?;
        check(probability(self.joint_dropout) && probability(self.detection_dropout), || {
            format!("camera `{id}`: dropout probabilities must be in [0, 1]")
        })?;
        Ok(CameraSpec {
            model,
            width: self.width,
            height: self.height,
            frame_rate: self.frame_rate,
            start_offset: self.start_offset,
            jitter: self.jitter,
            pixel_noise: self.pixel_noise,
            depth_noise: self.depth_noise,
            joint_dropout: self.joint_dropout,
            detection_dropout: self.detection_dropout,
        })
    }
}

impl PersonSpec {
    fn validate(&self, index: usize) -> Result<()> {
        check(!self.waypoints.is_empty(), || format!("person {index}: needs at least one waypoint"))?;
        check(self.waypoints.iter().flatten().all(|v| v.is_finite()), || {
            format!("person {index}: waypoints must be finite")
        })?;
        check(self.waypoints.windows(2).all(|w| w[1][0] > w[0][0]), || {
            format!("person {index}: waypoint times must be strictly increasing")
        })?;
        check(self.swing_frequency_hz >= 0.0 && self.swing_amplitude_deg.is_finite(), || {
            format!("person {index}: invalid swing parameters")
        })
    }

    /// Ground position of the chest at `t`.
    pub fn path_at(&self, t: f64) -> [f64; 2] {
        let w = &self.waypoints;
        let first = w[0];
        let last = w[w.len() - 1];
        if t <= first[0] {
            return [first[1], first[2]];
        }
        if t >= last[0] {
            return [last[1], last[2]];
        }
        let i = w.partition_point(|p| p[0] <= t) - 1;
        let (a, b) = (w[i], w[i + 1]);
        let s = (t - a[0]) / (b[0] - a[0]);
        [a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, path: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                path: path.to_string(),
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        check(self.duration > 0.0 && self.duration.is_finite(), || "duration must be positive".into())?;
        check(self.depth_splat_radius_px > 0.0, || "depth_splat_radius_px must be positive".into())?;
        NeighborhoodRadius::new(self.neighborhood_radius_px)?;
        for (i, p) in self.persons.iter().enumerate() {
            p.validate(i)?;
        }
        for (i, c) in self.cameras.iter().enumerate() {
            c.resolve()?;
            check(!self.cameras[..i].iter().any(|o| o.id == c.id), || {
                format!("duplicate camera id `{}`", c.id)
            })?;
        }
        Ok(())
    }

    pub fn camera_specs(&self) -> Result<Vec<CameraSpec>> {
        self.cameras.iter().map(CameraConfig::resolve).collect()
    }

    /// Copy restricted to the named cameras, keeping their configured order.
    pub fn with_cameras(&self, ids: &[String]) -> Result<Self> {
        for id in ids {
            if !self.cameras.iter().any(|c| &c.id == id) {
                return Err(Error::UnknownCamera(id.clone()));
            }
        }
        check(!ids.is_empty(), || "camera subset must not be empty".into())?;
        Ok(ScenarioConfig {
            cameras: self.cameras.iter().filter(|c| ids.contains(&c.id)).cloned().collect(),
            ..self.clone()
        })
    }
}

const BUNDLED: &[(&str, &str)] = &[
    ("four_kinect_walk", include_str!("../scenarios/four_kinect_walk.toml")),
    ("three_person_walk", include_str!("../scenarios/three_person_walk.toml")),
];

/// Scenarios shipped with the crate, by name.
pub fn bundled_scenario(name: &str) -> Option<ScenarioConfig> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| ScenarioConfig::from_toml_str(text, n).expect("bundled scenarios are valid"))
}

pub fn bundled_scenario_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

// Body layout in the person frame (forward, left, up), metres.
/// Depth gap beyond which a joint counts as hidden behind another surface.
const OCCLUSION_MARGIN_M: f64 = 0.15;

const HEAD: [f64; 3] = [0.0, 0.0, 1.70];
const NECK: [f64; 3] = [0.0, 0.0, 1.50];
const R_SHOULDER: [f64; 3] = [0.0, -0.20, 1.45];
const L_SHOULDER: [f64; 3] = [0.0, 0.20, 1.45];
const R_HIP: [f64; 3] = [0.0, -0.10, 0.95];
const L_HIP: [f64; 3] = [0.0, 0.10, 0.95];
/// Chest height equals the torso-weighted mean used for association centroids.
const CHEST_HEIGHT: f64 = 0.4 * 1.50 + 0.2 * 1.45 + 0.4 * 0.95;
const UPPER_ARM: f64 = 0.30;
const FOREARM: f64 = 0.27;
const THIGH: f64 = 0.45;
const SHIN: f64 = 0.43;
const LEG_SWING_RATIO: f64 = 0.6;

/// Analytic ground truth for every person of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    persons: Vec<PersonSpec>,
    duration: f64,
}

impl GroundTruth {
    pub fn new(persons: Vec<PersonSpec>, duration: f64) -> Self {
        GroundTruth { persons, duration }
    }

    pub fn person_count(&self) -> usize {
        self.persons.len()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// World-frame skeleton of `person` at time `t`.
    pub fn truth_at(&self, person: usize, t: Timestamp) -> Result<Skeleton3D> {
        let spec = self.persons.get(person).ok_or(Error::UnknownPerson(person))?;
        let t = t.seconds();
        if !(0.0..=self.duration).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                duration: self.duration,
            });
        }
        Ok(pose(spec, t))
    }
}

/// Limb direction in the sagittal plane: `angle` from straight down toward forward.
fn limb(angle: f64) -> [f64; 3] {
    [angle.sin(), 0.0, -angle.cos()]
}

fn add(a: [f64; 3], dir: [f64; 3], len: f64) -> [f64; 3] {
    [a[0] + dir[0] * len, a[1] + dir[1] * len, a[2] + dir[2] * len]
}

fn pose(spec: &PersonSpec, t: f64) -> Skeleton3D {
    let phase = 2.0 * PI * spec.swing_frequency_hz * t + spec.phase_deg.to_radians();
    let amp = spec.swing_amplitude_deg.to_radians();
    let arm = amp * phase.sin();
    // elbows and knees flex more at the back of the swing
    let elbow_flex = 0.3 + 0.4 * amp * (1.0 - phase.cos()) * 0.5;
    let knee_flex = |s: f64| 1.2 * amp * (1.0 - s) * 0.5;

    let mut local = [[0.0; 3]; JOINT_COUNT];
    local[JointId::HEAD.index()] = HEAD;
    local[JointId::NECK.index()] = NECK;
    local[JointId::CHEST.index()] = [0.0, 0.0, CHEST_HEIGHT];
    for (shoulder, elbow, wrist, base, swing) in [
        (JointId::R_SHOULDER, JointId::R_ELBOW, JointId::R_WRIST, R_SHOULDER, arm),
        (JointId::L_SHOULDER, JointId::L_ELBOW, JointId::L_WRIST, L_SHOULDER, -arm),
    ] {
        let e = add(base, limb(swing), UPPER_ARM);
        local[shoulder.index()] = base;
        local[elbow.index()] = e;
        local[wrist.index()] = add(e, limb(swing + elbow_flex), FOREARM);
    }
    for (hip, knee, ankle, base, sign) in [
        (JointId::R_HIP, JointId::R_KNEE, JointId::R_ANKLE, R_HIP, -1.0),
        (JointId::L_HIP, JointId::L_KNEE, JointId::L_ANKLE, L_HIP, 1.0),
    ] {
        let swing = sign * LEG_SWING_RATIO * arm;
        let k = add(base, limb(swing), THIGH);
        local[hip.index()] = base;
        local[knee.index()] = k;
        local[ankle.index()] = add(k, limb(swing - knee_flex(sign * phase.sin())), SHIN);
    }

    let [px, py] = spec.path_at(t);
    let h = spec.heading_deg.to_radians();
    let forward = Vector3::new(h.cos(), h.sin(), 0.0);
    let left = Vector3::new(-h.sin(), h.cos(), 0.0);
    let origin = Vector3::new(px, py, 0.0);
    let mut s = Skeleton3D::empty(Frame::World);
    for (slot, l) in s.joints.iter_mut().zip(local) {
        *slot = Some(Point3::from(origin + forward * l[0] + left * l[1] + Vector3::z() * l[2]));
    }
    s
}

/// Output of one camera at one capture time.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    /// Reported skeletons; persons lost to detection dropout are absent.
    pub skeletons: Vec<Skeleton2D>,
    pub depth: DepthMap,
}

/// Renders what one camera's detector and depth sensor report at time `t`.
pub fn render_detection(
    gt: &GroundTruth,
    cam: &CameraSpec,
    t: Timestamp,
    splat_radius_px: f64,
    rng: &mut impl Rng,
) -> Result<RenderedFrame> {
    let mut depth = DepthMap::empty(cam.width, cam.height);
    let mut reported = Vec::new();
    for person in 0..gt.person_count() {
        let truth = gt.truth_at(person, t)?;
        let dropped = rng.random::<f64>() < cam.detection_dropout;
        let mut s2 = Skeleton2D::default();
        let mut true_px = [None; JOINT_COUNT];
        for (j, joint) in truth.joints.iter().enumerate() {
            // fixed draw count per joint keeps the stream aligned across outcomes
            let depth_err: f64 = rng.sample::<f64, _>(StandardNormal) * cam.depth_noise;
            let ex: f64 = rng.sample::<f64, _>(StandardNormal) * cam.pixel_noise;
            let ey: f64 = rng.sample::<f64, _>(StandardNormal) * cam.pixel_noise;
            let lost = rng.random::<f64>() < cam.joint_dropout;

            let p_cam = cam.model.world_to_camera(&joint.expect("truth joints are all valid"));
            let Ok((px, z)) = project(&p_cam, &cam.model) else {
                continue;
            };
            splat(&mut depth, px.x, px.y, z + depth_err, splat_radius_px);
            let (x, y) = (px.x + ex, px.y + ey);
            let inside = x >= 0.0 && y >= 0.0 && x < cam.width as f64 && y < cam.height as f64;
            if inside && !lost {
                s2.joints[j] = Some(Joint2D { x, y, confidence: 1.0 });
                true_px[j] = Some((px, z));
            }
        }
        if !dropped {
            reported.push((s2, true_px));
        }
    }

    let mut skeletons = Vec::new();
    for (mut s2, true_px) in reported {
        for (slot, seen) in s2.joints.iter_mut().zip(true_px) {
            let Some((px, z)) = seen else { continue };
            if occluded(&depth, px, z) {
                *slot = None;
            }
        }
        if s2.valid_count() > 0 {
            skeletons.push(s2);
        }
    }
    Ok(RenderedFrame { skeletons, depth })
}

/// True when a surface well in front of `z` covers the joint's own pixel.
fn occluded(dm: &DepthMap, px: Pixel, z: f64) -> bool {
    let (x, y) = (px.x.floor(), px.y.floor());
    if x < 0.0 || y < 0.0 || x >= dm.width() as f64 || y >= dm.height() as f64 {
        return false;
    }
    let d = dm.get(x as usize, y as usize);
    d > 0.0 && d < z - OCCLUSION_MARGIN_M
}

/// Paints `depth` over a disk, keeping the nearer surface where disks overlap.
fn splat(dm: &mut DepthMap, cx: f64, cy: f64, depth: f64, radius: f64) {
    if !(depth > 0.0) {
        return;
    }
    let (w, h) = (dm.width() as f64, dm.height() as f64);
    let x0 = (cx - radius).floor().max(0.0);
    let y0 = (cy - radius).floor().max(0.0);
    let x1 = (cx + radius).ceil().min(w - 1.0);
    let y1 = (cy + radius).ceil().min(h - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let r2 = radius * radius;
    for y in y0 as usize..=y1 as usize {
        for x in x0 as usize..=x1 as usize {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if dx * dx + dy * dy < r2 {
                let cur = dm.get(x, y);
                if !(cur > 0.0) || depth < cur {
                    dm.set(x, y, depth);
                }
            }
        }
    }
}

/// A detection set together with the time it reaches the fusion master.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub arrival: f64,
    pub detections: DetectionSet,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    /// Sorted by arrival time.
    pub events: Vec<StreamEvent>,
    pub truth: GroundTruth,
    pub cameras: Vec<CameraSpec>,
}

/// Stable 64-bit FNV-1a, used to derive per-camera random streams.
fn stream_id(camera_id: &str) -> u64 {
    camera_id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Random stream owned by one camera; independent of the other cameras.
pub fn camera_rng(seed: u64, camera_id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(camera_id));
    rng
}

/// Capture times of a camera within `[0, duration)`.
pub fn frame_times(cam: &CameraSpec, duration: f64) -> impl Iterator<Item = f64> + '_ {
    (0u64..)
        .map(move |n| cam.start_offset + n as f64 / cam.frame_rate)
        .take_while(move |t| *t < duration)
}

/// Simulates every camera and merges their streams in arrival order.
///
/// Each camera delivers in capture order: a frame never overtakes the
/// previous one from the same camera, so its latency is
/// `max(jitter sample, previous arrival - capture)`, which stays within the
/// configured jitter bounds.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let cameras = cfg.camera_specs()?;
    let truth = GroundTruth::new(cfg.persons.clone(), cfg.duration);
    let radius = NeighborhoodRadius::new(cfg.neighborhood_radius_px)?;

    let mut tagged: Vec<(f64, usize, StreamEvent)> = Vec::new();
    for (ci, cam) in cameras.iter().enumerate() {
        let mut rng = camera_rng(cfg.seed, &cam.model.id);
        let mut pipeline = CameraPipeline::new(cam.model.clone(), radius);
        let mut prev_arrival = f64::NEG_INFINITY;
        for t in frame_times(cam, cfg.duration) {
            let stamp = Timestamp::new(t)?;
            let frame = render_detection(&truth, cam, stamp, cfg.depth_splat_radius_px, &mut rng)?;
            let detections = pipeline.process(&frame.skeletons, &frame.depth, stamp)?;
            let lag = cam.jitter[0] + rng.random::<f64>() * (cam.jitter[1] - cam.jitter[0]);
            let arrival = (t + lag).max(prev_arrival);
            prev_arrival = arrival;
            tagged.push((arrival, ci, StreamEvent { arrival, detections }));
        }
    }
    tagged.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.detections.stamp.seconds().total_cmp(&b.2.detections.stamp.seconds()))
    });
    Ok(ScenarioRun {
        events: tagged.into_iter().map(|(_, _, e)| e).collect(),
        truth,
        cameras,
    })
}
