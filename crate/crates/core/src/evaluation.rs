//! Reprojection-error evaluation of fused tracks against a moving-average
//! baseline, over camera subsets and seeds.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::association::{centroid, munkres};
use crate::error::{Error, Result};
use crate::geometry::{project, Pixel};
use crate::model::{CameraModel, JointId, Skeleton3D, Timestamp, JOINT_COUNT};
use crate::sim::{frame_times, run_scenario, GroundTruth, ScenarioConfig, StreamEvent};
use crate::tracker::{Tracker, TrackerConfig};

/// Pixel distance between a ground-truth pixel and a fused world point seen from `ref_cam`.
///
/// Points behind the reference camera yield [`Error::BehindCamera`]; callers
/// count them as excluded samples.
pub fn reprojection_error(fused: &Point3<f64>, truth_pixel: Pixel, ref_cam: &CameraModel) -> Result<f64> {
    let (p, _) = project(&ref_cam.world_to_camera(fused), ref_cam)?;
    Ok(p.distance(&truth_pixel))
}

/// Mean of the most recent `k` valid observations of one joint.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    k: usize,
    window: VecDeque<Vector3<f64>>,
}

impl MovingAverage {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("moving average window must be at least 1".into()));
        }
        Ok(MovingAverage {
            k,
            window: VecDeque::with_capacity(k),
        })
    }

    /// Adds an observation; missing observations are skipped.
    pub fn push(&mut self, obs: Option<Point3<f64>>) {
        if let Some(p) = obs {
            if self.window.len() == self.k {
                self.window.pop_front();
            }
            self.window.push_back(p.coords);
        }
    }

    pub fn value(&self) -> Option<Point3<f64>> {
        if self.window.is_empty() {
            return None;
        }
        let sum = self.window.iter().fold(Vector3::zeros(), |a, v| a + v);
        Some(Point3::from(sum / self.window.len() as f64))
    }
}

/// Smooths a joint's observation series with a trailing window of `k` valid samples.
pub fn maf_baseline(history: &[Option<Point3<f64>>], k: usize) -> Result<Vec<Option<Point3<f64>>>> {
    let mut avg = MovingAverage::new(k)?;
    Ok(history
        .iter()
        .map(|obs| {
            avg.push(*obs);
            avg.value()
        })
        .collect())
}

/// Estimator being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The UKF fusion tracker.
    Ours,
    /// Moving average over the last `k` lifted observations.
    Maf(usize),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Ours => "ours".into(),
            Method::Maf(k) => format!("MAF_{k}"),
        }
    }
}

/// A named camera subset, e.g. `2-cam`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSubset {
    pub name: String,
    pub cameras: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Camera whose image the errors are measured in; defaults to the first configured camera.
    pub reference_camera: Option<String>,
    /// Defaults to 1, 2 and all cameras (see [`EvalConfig::resolve_subsets`]).
    pub subsets: Vec<CameraSubset>,
    pub include_ours: bool,
    pub maf_k: Vec<usize>,
    /// Scenario seeds; empty means the scenario's own seed.
    pub seeds: Vec<u64>,
    /// Samples before this time are not scored.
    pub warmup: f64,
    /// Fused tracks farther than this from a person (chest distance, m) are not credited to them.
    pub max_match_distance: f64,
    pub tracker: TrackerConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            reference_camera: None,
            subsets: Vec::new(),
            include_ours: true,
            maf_k: vec![30, 40],
            seeds: Vec::new(),
            warmup: 1.0,
            max_match_distance: 1.0,
            tracker: TrackerConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn from_toml_str(text: &str, path: &str) -> Result<Self> {
        let cfg: EvalConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        Ok(cfg)
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.maf_k.iter().map(|k| Method::Maf(*k)).collect();
        if self.include_ours {
            m.push(Method::Ours);
        }
        m
    }

    /// Configured subsets, or the default nested 1-, 2- and all-camera
    /// networks built from the non-reference cameras first.
    pub fn resolve_subsets(&self, scenario: &ScenarioConfig, reference: &str) -> Vec<CameraSubset> {
        if !self.subsets.is_empty() {
            return self.subsets.clone();
        }
        let mut order: Vec<String> = scenario
            .cameras
            .iter()
            .map(|c| c.id.clone())
            .filter(|id| id != reference)
            .collect();
        order.push(reference.to_string());
        let n = order.len();
        let mut sizes = vec![1, 2, n];
        sizes.retain(|s| *s <= n);
        sizes.dedup();
        sizes
            .into_iter()
            .map(|s| CameraSubset {
                name: format!("{s}-cam"),
                cameras: order[..s].to_vec(),
            })
            .collect()
    }
}

/// Error statistics of one (configuration, method, joint) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub config: String,
    pub method: String,
    pub joint: String,
    pub mean_px: f64,
    pub std_px: f64,
    pub n_samples: usize,
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Detection sets the tracker refused (time regression or staleness).
    pub rejected_ingests: usize,
}

/// Cells above this many pixels are flagged in the text table.
pub const SATURATION_PX: f64 = 100.0;

impl EvalReport {
    pub fn row(&self, config: &str, method: &str, joint: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.method == method && r.joint == joint)
    }

    /// Mean over joints of the per-joint mean errors.
    pub fn aggregate_mean(&self, config: &str, method: &str) -> Option<f64> {
        let means: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.config == config && r.method == method && r.n_samples > 0)
            .map(|r| r.mean_px)
            .collect();
        (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
    }

    pub fn configs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.config) {
                out.push(r.config.clone());
            }
        }
        out
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,method,joint,mean_px,std_px,n_samples,n_excluded\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.3},{:.3},{},{}",
                r.config, r.method, r.joint, r.mean_px, r.std_px, r.n_samples, r.n_excluded
            );
        }
        s
    }

    /// Per-joint `mean ± std` table, one block per configuration.
    pub fn to_table(&self) -> String {
        let joints: Vec<&str> = JointId::LIMBS.iter().map(|j| j.name()).collect();
        let cell_w = 14;
        let mut s = String::new();
        let _ = write!(s, "{:<8} {:<8}", "", "");
        for j in &joints {
            let _ = write!(s, " {j:>cell_w$}");
        }
        s.push('\n');
        let mut saturated = false;
        for config in self.configs() {
            for method in self.methods() {
                let _ = write!(s, "{config:<8} {method:<8}");
                for j in &joints {
                    let cell = match self.row(&config, &method, j) {
                        Some(r) if r.n_samples > 0 => {
                            let flag = if r.mean_px > SATURATION_PX {
                                saturated = true;
                                "*"
                            } else {
                                ""
                            };
                            format!("{:.1}±{:.1}{flag}", r.mean_px, r.std_px)
                        }
                        _ => "n/a".into(),
                    };
                    let _ = write!(s, " {cell:>cell_w$}");
                }
                s.push('\n');
            }
        }
        if saturated {
            let _ = writeln!(s, "* mean above {SATURATION_PX} px");
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    errors: Vec<f64>,
    excluded: usize,
}

impl Accumulator {
    fn stats(&self) -> (f64, f64) {
        let n = self.errors.len();
        if n == 0 {
            return (f64::NAN, f64::NAN);
        }
        let mean = self.errors.iter().sum::<f64>() / n as f64;
        let var = self.errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    }
}

/// Ground-truth pixels of the limb joints in the reference camera; `None` if not visible.
fn truth_pixels(truth: &Skeleton3D, ref_cam: &CameraModel) -> [Option<Pixel>; JOINT_COUNT] {
    truth
        .joints
        .map(|j| j.and_then(|p| project(&ref_cam.world_to_camera(&p), ref_cam).ok().map(|(px, _)| px)))
}

fn score(
    acc: &mut [Accumulator],
    estimate: Option<&Skeleton3D>,
    pixels: &[Option<Pixel>; JOINT_COUNT],
    ref_cam: &CameraModel,
) {
    for (slot, joint) in acc.iter_mut().zip(JointId::LIMBS) {
        let Some(truth_px) = pixels[joint.index()] else { continue };
        match estimate.and_then(|s| s.joint(joint)) {
            Some(p) => match reprojection_error(&p, truth_px, ref_cam) {
                Ok(e) => slot.errors.push(e),
                Err(_) => slot.excluded += 1,
            },
            None => slot.excluded += 1,
        }
    }
}

fn skeleton_center(s: &Skeleton3D) -> Option<Point3<f64>> {
    centroid(s).or_else(|| {
        let valid: Vec<_> = s.joints.iter().flatten().collect();
        (!valid.is_empty()).then(|| {
            Point3::from(valid.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / valid.len() as f64)
        })
    })
}

/// Pairs estimates with persons by chest distance, within `max_dist`.
fn match_to_persons(
    truths: &[Skeleton3D],
    estimates: &[Skeleton3D],
    max_dist: f64,
) -> Vec<Option<usize>> {
    let cost: Vec<Vec<f64>> = truths
        .iter()
        .map(|t| {
            let tc = skeleton_center(t);
            estimates
                .iter()
                .map(|e| match (tc, skeleton_center(e)) {
                    (Some(a), Some(b)) if (a - b).norm() <= max_dist => (a - b).norm(),
                    _ => f64::INFINITY,
                })
                .collect()
        })
        .collect();
    munkres(&cost)
}

struct SubsetRun<'a> {
    events: Vec<&'a StreamEvent>,
    truth: &'a GroundTruth,
    ref_cam: &'a CameraModel,
    sample_times: &'a [f64],
}

/// Scores the tracker on one stream; returns per-limb accumulators and rejected ingests.
fn score_ours(run: &SubsetRun, eval: &EvalConfig, acc: &mut [Accumulator]) -> Result<usize> {
    let mut tracker = Tracker::new(eval.tracker.clone())?;
    let mut rejected = 0;
    let mut next = 0;
    for &t in run.sample_times {
        while next < run.events.len() && run.events[next].arrival <= t {
            if let Err(e) = tracker.ingest(&run.events[next].detections) {
                log::warn!("ingest rejected: {e}");
                rejected += 1;
            }
            next += 1;
        }
        let snap = tracker.snapshot(Timestamp(t));
        let fused: Vec<Skeleton3D> = snap.tracks.into_iter().map(|t| t.skeleton).collect();
        let truths: Vec<Skeleton3D> = (0..run.truth.person_count())
            .map(|p| run.truth.truth_at(p, Timestamp(t)))
            .collect::<Result<_>>()?;
        let assignment = match_to_persons(&truths, &fused, eval.max_match_distance);
        for (truth, est) in truths.iter().zip(assignment) {
            let pixels = truth_pixels(truth, run.ref_cam);
            score(acc, est.map(|i| &fused[i]), &pixels, run.ref_cam);
        }
    }
    Ok(rejected)
}

/// Scores a moving average per person and joint, with detections routed to the
/// nearest ground-truth person.
fn score_maf(run: &SubsetRun, k: usize, acc: &mut [Accumulator]) -> Result<()> {
    let persons = run.truth.person_count();
    let mut filters: Vec<Vec<MovingAverage>> = (0..persons)
        .map(|_| (0..JOINT_COUNT).map(|_| MovingAverage::new(k)).collect())
        .collect::<Result<_>>()?;
    let mut next = 0;
    for &t in run.sample_times {
        while next < run.events.len() && run.events[next].arrival <= t {
            let dets = &run.events[next].detections;
            let truths: Vec<Skeleton3D> = (0..persons)
                .map(|p| run.truth.truth_at(p, dets.stamp))
                .collect::<Result<_>>()?;
            let assignment = match_to_persons(&truths, &dets.skeletons, f64::INFINITY);
            for (person, det) in assignment.iter().enumerate() {
                let Some(d) = det else { continue };
                for (f, obs) in filters[person].iter_mut().zip(dets.skeletons[*d].joints.iter()) {
                    f.push(*obs);
                }
            }
            next += 1;
        }
        for (person, joints) in filters.iter().enumerate() {
            let truth = run.truth.truth_at(person, Timestamp(t))?;
            let mut est = Skeleton3D::empty(crate::model::Frame::World);
            for (slot, f) in est.joints.iter_mut().zip(joints) {
                *slot = f.value();
            }
            score(acc, Some(&est), &truth_pixels(&truth, run.ref_cam), run.ref_cam);
        }
    }
    Ok(())
}

/// Runs every seed and camera subset of a scenario and tabulates limb-joint errors.
///
/// Errors are measured at the reference camera's frame times, after feeding
/// each method every detection set that has arrived by then.
pub fn evaluate(scenario: &ScenarioConfig, eval: &EvalConfig) -> Result<EvalReport> {
    scenario.validate()?;
    eval.tracker.validate()?;
    let specs = scenario.camera_specs()?;
    let reference = match &eval.reference_camera {
        Some(id) => specs
            .iter()
            .find(|c| &c.model.id == id)
            .ok_or_else(|| Error::UnknownCamera(id.clone()))?,
        None => specs
            .first()
            .ok_or_else(|| Error::Config("scenario has no cameras".into()))?,
    };
    let subsets = eval.resolve_subsets(scenario, &reference.model.id);
    for s in &subsets {
        if s.cameras.is_empty() {
            return Err(Error::Config(format!("camera subset `{}` is empty", s.name)));
        }
        for id in &s.cameras {
            if !specs.iter().any(|c| &c.model.id == id) {
                return Err(Error::UnknownCamera(id.clone()));
            }
        }
    }
    let methods = eval.methods();
    let seeds = if eval.seeds.is_empty() {
        vec![scenario.seed]
    } else {
        eval.seeds.clone()
    };
    let sample_times: Vec<f64> = frame_times(reference, scenario.duration)
        .filter(|t| *t >= eval.warmup)
        .collect();

    let mut acc = vec![vec![vec![Accumulator::default(); JointId::LIMBS.len()]; methods.len()]; subsets.len()];
    let mut rejected = 0;
    for seed in seeds {
        let run = run_scenario(&ScenarioConfig {
            seed,
            ..scenario.clone()
        })?;
        for (si, subset) in subsets.iter().enumerate() {
            let sub = SubsetRun {
                events: run
                    .events
                    .iter()
                    .filter(|e| subset.cameras.contains(&e.detections.camera_id))
                    .collect(),
                truth: &run.truth,
                ref_cam: &reference.model,
                sample_times: &sample_times,
            };
            for (mi, method) in methods.iter().enumerate() {
                match method {
                    Method::Ours => rejected += score_ours(&sub, eval, &mut acc[si][mi])?,
                    Method::Maf(k) => score_maf(&sub, *k, &mut acc[si][mi])?,
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (si, subset) in subsets.iter().enumerate() {
        for (mi, method) in methods.iter().enumerate() {
            for (ji, joint) in JointId::LIMBS.iter().enumerate() {
                let a = &acc[si][mi][ji];
                let (mean_px, std_px) = a.stats();
                rows.push(EvalRow {
                    config: subset.name.clone(),
                    method: method.label(),
                    joint: joint.name().to_string(),
                    mean_px,
                    std_px,
                    n_samples: a.errors.len(),
                    n_excluded: a.excluded,
                });
            }
        }
    }
    Ok(EvalReport {
        rows,
        rejected_ingests: rejected,
    })
}
