//! The fusion master: asynchronous ingestion of detection sets into
//! per-person tracks of per-joint filters.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::thread;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::association::{centroid, data_association, GatingThreshold, TrackId};
use crate::error::{Error, Result};
use crate::model::{DetectionSet, Frame, Skeleton3D, Timestamp, JOINT_COUNT};
use crate::ukf::{init_filter, predict, update, FilterState, NoiseConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub gating: GatingThreshold,
    pub noise: NoiseConfig,
    /// Seconds without a matched detection before a track is retired.
    pub max_track_age: f64,
    /// Matched detections (including the first) before a track is reported.
    pub min_hits_to_confirm: u32,
    /// How far behind the newest ingested stamp a detection may be.
    pub staleness_tolerance: f64,
    /// Tracks whose centroids come closer than this (metres) are merged into
    /// the one with more hits. Zero disables merging.
    pub merge_distance: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            gating: GatingThreshold::default(),
            noise: NoiseConfig::default(),
            max_track_age: 1.0,
            min_hits_to_confirm: 3,
            staleness_tolerance: 0.5,
            merge_distance: 0.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if !(self.max_track_age > 0.0) {
            return Err(Error::Config(format!(
                "max_track_age must be positive, got {}",
                self.max_track_age
            )));
        }
        if !(self.staleness_tolerance >= 0.0) {
            return Err(Error::Config("staleness_tolerance must be non-negative".into()));
        }
        if !(self.merge_distance >= 0.0 && self.merge_distance.is_finite()) {
            return Err(Error::Config("merge_distance must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One tracked person.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: TrackId,
    /// `None` until the joint has been measured at least once.
    pub joint_filters: [Option<FilterState>; JOINT_COUNT],
    pub centroid_filter: FilterState,
    pub created_at: Timestamp,
    pub last_seen: Timestamp,
    pub missed_updates: u32,
    pub hits: u32,
}

impl Track {
    fn birth(id: TrackId, skeleton: &Skeleton3D, center: Point3<f64>, stamp: Timestamp, cfg: &NoiseConfig) -> Result<Self> {
        let mut joint_filters: [Option<FilterState>; JOINT_COUNT] = Default::default();
        for (slot, joint) in joint_filters.iter_mut().zip(skeleton.joints.iter()) {
            if let Some(p) = joint {
                *slot = Some(init_filter(&p.coords, stamp, cfg)?);
            }
        }
        Ok(Track {
            id,
            joint_filters,
            centroid_filter: init_filter(&center.coords, stamp, cfg)?,
            created_at: stamp,
            last_seen: stamp,
            missed_updates: 0,
            hits: 1,
        })
    }

    fn absorb(&mut self, skeleton: &Skeleton3D, center: Point3<f64>, stamp: Timestamp, cfg: &NoiseConfig) -> Result<()> {
        self.centroid_filter = step(&self.centroid_filter, Some(&center), stamp, cfg)?;
        for (slot, joint) in self.joint_filters.iter_mut().zip(skeleton.joints.iter()) {
            *slot = match (slot.as_ref(), joint) {
                (Some(f), meas) => Some(step(f, meas.as_ref(), stamp, cfg)?),
                (None, Some(p)) => Some(init_filter(&p.coords, stamp, cfg)?),
                (None, None) => None,
            };
        }
        self.last_seen = self.last_seen.max(stamp);
        self.missed_updates = 0;
        self.hits += 1;
        Ok(())
    }

    pub fn is_confirmed(&self, min_hits: u32) -> bool {
        self.hits >= min_hits
    }
}

/// Predict to `stamp` (never backwards), then fuse `meas` when present.
fn step(f: &FilterState, meas: Option<&Point3<f64>>, stamp: Timestamp, cfg: &NoiseConfig) -> Result<FilterState> {
    let predicted = predict(f, stamp.max(f.last_update), cfg)?;
    match meas {
        Some(p) => update(&predicted, &p.coords, cfg),
        None => Ok(predicted),
    }
}

/// Lifecycle notifications produced by [`Tracker::ingest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrackEvent {
    Created {
        track_id: TrackId,
        stamp: Timestamp,
        camera_id: String,
    },
    Updated {
        track_id: TrackId,
        stamp: Timestamp,
        camera_id: String,
    },
    Retired {
        track_id: TrackId,
        stamp: Timestamp,
        last_seen: Timestamp,
    },
}

/// One confirmed track as seen by [`Tracker::snapshot`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedTrack {
    pub track_id: TrackId,
    pub skeleton: Skeleton3D,
    /// Trace of each joint's position covariance, `None` for unmeasured joints.
    pub position_variance: [Option<f64>; JOINT_COUNT],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedSnapshot {
    pub stamp: Timestamp,
    pub tracks: Vec<FusedTrack>,
}

/// Single-writer multi-person tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    camera_stamps: BTreeMap<String, Timestamp>,
    newest: Option<Timestamp>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
            camera_stamps: BTreeMap::new(),
            newest: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn check_stamp(&self, dets: &DetectionSet) -> Result<()> {
        if let Some(prev) = self.camera_stamps.get(&dets.camera_id) {
            if dets.stamp < *prev {
                return Err(Error::CameraTimeRegression {
                    camera: dets.camera_id.clone(),
                    previous: prev.seconds(),
                    stamp: dets.stamp.seconds(),
                });
            }
        }
        if let Some(newest) = self.newest {
            let lag = newest.seconds() - dets.stamp.seconds();
            if lag > self.cfg.staleness_tolerance {
                return Err(Error::StaleDetection {
                    camera: dets.camera_id.clone(),
                    stamp: dets.stamp.seconds(),
                    newest: newest.seconds(),
                    lag,
                    tolerance: self.cfg.staleness_tolerance,
                });
            }
        }
        Ok(())
    }

    /// Fuses one camera's detection set.
    ///
    /// Detections are processed in arrival order. A detection older than some
    /// track's filters (but within the staleness tolerance) is applied at the
    /// filters' current time.
    pub fn ingest(&mut self, dets: &DetectionSet) -> Result<Vec<TrackEvent>> {
        if !dets.stamp.seconds().is_finite() || dets.stamp.seconds() < 0.0 {
            return Err(Error::NonFinite("detection stamp"));
        }
        if let Some(s) = dets.skeletons.iter().find(|s| s.frame != Frame::World) {
            return Err(Error::FrameMismatch {
                expected: Frame::World.to_string(),
                found: s.frame.to_string(),
            });
        }
        if let Err(e) = self.check_stamp(dets) {
            log::warn!("rejected detection: {e}");
            return Err(e);
        }
        self.camera_stamps.insert(dets.camera_id.clone(), dets.stamp);
        let now = self.newest.map_or(dets.stamp, |n| n.max(dets.stamp));
        self.newest = Some(now);

        let cfg = &self.cfg;
        let assoc = {
            let views: Vec<(TrackId, &FilterState)> =
                self.tracks.iter().map(|t| (t.id, &t.centroid_filter)).collect();
            data_association(dets, &views, cfg.gating, &cfg.noise)?
        };

        let mut events = Vec::new();
        for (det_idx, track_id) in &assoc.matches {
            let skeleton = &dets.skeletons[*det_idx];
            let center = centroid(skeleton).expect("matched detections have finite cost");
            let track = self
                .tracks
                .iter_mut()
                .find(|t| t.id == *track_id)
                .expect("association only returns live tracks");
            track.absorb(skeleton, center, dets.stamp, &cfg.noise)?;
            events.push(TrackEvent::Updated {
                track_id: *track_id,
                stamp: dets.stamp,
                camera_id: dets.camera_id.clone(),
            });
        }

        for det_idx in &assoc.unmatched_detections {
            let skeleton = &dets.skeletons[*det_idx];
            let Some(center) = centroid(skeleton) else {
                log::debug!("{}: skeleton {det_idx} has no torso joints, not tracked", dets.camera_id);
                continue;
            };
            let id = TrackId(self.next_id);
            self.next_id += 1;
            self.tracks.push(Track::birth(id, skeleton, center, dets.stamp, &cfg.noise)?);
            events.push(TrackEvent::Created {
                track_id: id,
                stamp: dets.stamp,
                camera_id: dets.camera_id.clone(),
            });
        }

        for id in &assoc.unmatched_tracks {
            if let Some(t) = self.tracks.iter_mut().find(|t| t.id == *id) {
                t.missed_updates += 1;
            }
        }

        let max_age = cfg.max_track_age;
        self.tracks.retain(|t| {
            let stale = now.seconds() - t.last_seen.seconds() > max_age;
            if stale {
                events.push(TrackEvent::Retired {
                    track_id: t.id,
                    stamp: now,
                    last_seen: t.last_seen,
                });
            }
            !stale
        });
        self.merge_duplicates(now, &mut events)?;
        Ok(events)
    }

    /// Retires tracks that sit within `merge_distance` of a track with more
    /// hits (ties go to the older id).
    fn merge_duplicates(&mut self, now: Timestamp, events: &mut Vec<TrackEvent>) -> Result<()> {
        let radius = self.cfg.merge_distance;
        if radius <= 0.0 || self.tracks.len() < 2 {
            return Ok(());
        }
        let mut order: Vec<usize> = (0..self.tracks.len()).collect();
        order.sort_by(|&a, &b| {
            let (ta, tb) = (&self.tracks[a], &self.tracks[b]);
            tb.hits.cmp(&ta.hits).then(ta.id.cmp(&tb.id))
        });
        let mut centers = Vec::with_capacity(self.tracks.len());
        for t in &self.tracks {
            let f = &t.centroid_filter;
            centers.push(predict(f, now.max(f.last_update), &self.cfg.noise)?.position());
        }
        let mut kept: Vec<usize> = Vec::new();
        let mut drop = vec![false; self.tracks.len()];
        for i in order {
            if kept.iter().any(|&k| (centers[k] - centers[i]).norm() < radius) {
                drop[i] = true;
            } else {
                kept.push(i);
            }
        }
        let mut idx = 0;
        self.tracks.retain(|t| {
            let gone = drop[idx];
            idx += 1;
            if gone {
                log::debug!("track {} merged as a duplicate", t.id.0);
                events.push(TrackEvent::Retired {
                    track_id: t.id,
                    stamp: now,
                    last_seen: t.last_seen,
                });
            }
            !gone
        });
        Ok(())
    }

    /// Confirmed tracks with every filter extrapolated to `t`; read-only.
    pub fn snapshot(&self, t: Timestamp) -> FusedSnapshot {
        let noise = &self.cfg.noise;
        let tracks = self
            .tracks
            .iter()
            .filter(|tr| tr.is_confirmed(self.cfg.min_hits_to_confirm))
            .map(|tr| {
                let mut skeleton = Skeleton3D::empty(Frame::World);
                let mut position_variance = [None; JOINT_COUNT];
                for (i, f) in tr.joint_filters.iter().enumerate() {
                    let Some(f) = f else { continue };
                    let at = t.max(f.last_update);
                    // predicting a PD state forward cannot fail
                    let p = predict(f, at, noise).unwrap_or_else(|_| f.clone());
                    skeleton.joints[i] = Some(Point3::from(p.position()));
                    position_variance[i] = Some(p.position_covariance().trace());
                }
                FusedTrack {
                    track_id: tr.id,
                    skeleton,
                    position_variance,
                }
            })
            .collect();
        FusedSnapshot { stamp: t, tracks }
    }
}

enum Message {
    Detections(DetectionSet),
    Snapshot(Timestamp, mpsc::Sender<FusedSnapshot>),
}

/// Runs a [`Tracker`] on its own thread behind an ordered queue.
///
/// Any number of producers may clone the handle's sender; ingests are applied
/// in queue order and snapshots are answered between ingests.
pub struct FusionMaster {
    tx: mpsc::Sender<Message>,
    worker: thread::JoinHandle<(Tracker, Vec<Result<Vec<TrackEvent>>>)>,
}

/// Producer side of a [`FusionMaster`] queue.
#[derive(Clone)]
pub struct MasterSender(mpsc::Sender<Message>);

impl MasterSender {
    /// Enqueues a detection set; returns false once the master has shut down.
    pub fn send(&self, dets: DetectionSet) -> bool {
        self.0.send(Message::Detections(dets)).is_ok()
    }
}

impl FusionMaster {
    pub fn spawn(cfg: TrackerConfig) -> Result<Self> {
        let mut tracker = Tracker::new(cfg)?;
        let (tx, rx) = mpsc::channel();
        let worker = thread::spawn(move || {
            let mut results = Vec::new();
            for msg in rx {
                match msg {
                    Message::Detections(d) => results.push(tracker.ingest(&d)),
                    Message::Snapshot(t, reply) => {
                        let _ = reply.send(tracker.snapshot(t));
                    }
                }
            }
            (tracker, results)
        });
        Ok(FusionMaster { tx, worker })
    }

    pub fn sender(&self) -> MasterSender {
        MasterSender(self.tx.clone())
    }

    /// Snapshot taken after every message queued so far.
    pub fn snapshot(&self, t: Timestamp) -> Option<FusedSnapshot> {
        let (reply, rx) = mpsc::channel();
        self.tx.send(Message::Snapshot(t, reply)).ok()?;
        rx.recv().ok()
    }

    /// Drains the queue and returns the tracker with every ingest result.
    ///
    /// Outstanding [`MasterSender`] clones must be dropped first.
    pub fn finish(self) -> (Tracker, Vec<Result<Vec<TrackEvent>>>) {
        drop(self.tx);
        self.worker.join().expect("fusion master thread panicked")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::JointId;

    fn person(center: [f64; 3]) -> Skeleton3D {
        let mut s = Skeleton3D::empty(Frame::World);
        for i in 0..JOINT_COUNT {
            let dz = 0.1 * (i as f64 - 7.0);
            s.joints[i] = Some(Point3::new(center[0], center[1], center[2] + dz));
        }
        s.joints[JointId::CHEST.index()] = Some(Point3::from(center));
        s
    }

    fn set(camera: &str, stamp: f64, skeletons: Vec<Skeleton3D>) -> DetectionSet {
        DetectionSet {
            camera_id: camera.into(),
            stamp: Timestamp(stamp),
            skeletons,
        }
    }

    #[test]
    fn first_detection_creates_track() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let ev = tr.ingest(&set("a", 0.0, vec![person([0.0, 0.0, 1.3])])).unwrap();
        assert_eq!(ev.len(), 1);
        assert!(matches!(ev[0], TrackEvent::Created { track_id: TrackId(0), .. }));
        assert_eq!(tr.tracks().len(), 1);
        // not yet confirmed
        assert!(tr.snapshot(Timestamp(0.0)).tracks.is_empty());
    }

    #[test]
    fn fresh_tracker_snapshot_is_empty() {
        let tr = Tracker::new(TrackerConfig::default()).unwrap();
        assert!(tr.snapshot(Timestamp(3.0)).tracks.is_empty());
    }

    #[test]
    fn alternating_cameras_keep_one_track() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        for k in 0..60 {
            let cam = if k % 2 == 0 { "a" } else { "b" };
            tr.ingest(&set(cam, k as f64 * 0.02, vec![person([1.0, 2.0, 1.3])])).unwrap();
        }
        assert_eq!(tr.tracks().len(), 1);
        let snap = tr.snapshot(Timestamp(59.0 * 0.02));
        assert_eq!(snap.tracks.len(), 1);
        let chest = snap.tracks[0].skeleton.joint(JointId::CHEST).unwrap();
        assert!((chest - Point3::new(1.0, 2.0, 1.3)).norm() < 1e-9);
    }

    #[test]
    fn gate_miss_near_a_track_is_merged_away() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        for k in 0..10 {
            tr.ingest(&set("a", k as f64 * 0.03, vec![person([0.0, 0.0, 1.3])])).unwrap();
        }
        // 30 cm off: far outside the gate of a settled track, inside merge distance
        let ev = tr.ingest(&set("a", 0.3, vec![person([0.3, 0.0, 1.3])])).unwrap();
        assert!(matches!(ev[0], TrackEvent::Created { track_id: TrackId(1), .. }));
        assert!(matches!(ev[1], TrackEvent::Retired { track_id: TrackId(1), .. }));
        assert_eq!(tr.tracks().len(), 1);
        assert_eq!(tr.tracks()[0].id, TrackId(0));

        let far = Tracker::new(TrackerConfig {
            merge_distance: 0.0,
            ..TrackerConfig::default()
        });
        let mut tr = far.unwrap();
        tr.ingest(&set("a", 0.0, vec![person([0.0, 0.0, 1.3])])).unwrap();
        tr.ingest(&set("a", 0.0, vec![person([0.0, 0.0, 1.3]), person([0.3, 0.0, 1.3])])).unwrap();
        assert_eq!(tr.tracks().len(), 2);
    }

    #[test]
    fn absent_person_is_retired() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.ingest(&set("a", 0.0, vec![person([0.0, 0.0, 1.3])])).unwrap();
        let ev = tr.ingest(&set("a", 0.9, vec![])).unwrap();
        assert!(ev.is_empty());
        assert_eq!(tr.tracks()[0].missed_updates, 1);
        let ev = tr.ingest(&set("a", 1.01, vec![])).unwrap();
        assert_eq!(
            ev,
            vec![TrackEvent::Retired {
                track_id: TrackId(0),
                stamp: Timestamp(1.01),
                last_seen: Timestamp(0.0)
            }]
        );
        assert!(tr.tracks().is_empty());
        // ids are never reused
        let ev = tr.ingest(&set("a", 1.1, vec![person([0.0, 0.0, 1.3])])).unwrap();
        assert!(matches!(ev[0], TrackEvent::Created { track_id: TrackId(1), .. }));
    }

    #[test]
    fn rejects_regression_and_staleness() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.ingest(&set("a", 1.0, vec![])).unwrap();
        assert!(matches!(
            tr.ingest(&set("a", 0.99, vec![])),
            Err(Error::CameraTimeRegression { .. })
        ));
        // other camera, within tolerance
        tr.ingest(&set("b", 0.6, vec![])).unwrap();
        assert!(matches!(
            tr.ingest(&set("c", 0.49, vec![])),
            Err(Error::StaleDetection { .. })
        ));
    }

    #[test]
    fn rejects_camera_frame_skeletons() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let mut s = person([0.0, 0.0, 1.0]);
        s.frame = Frame::Camera("a".into());
        assert!(matches!(
            tr.ingest(&set("a", 0.0, vec![s])),
            Err(Error::FrameMismatch { .. })
        ));
    }

    #[test]
    fn stale_detection_within_tolerance_applies_at_filter_time() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.ingest(&set("a", 1.0, vec![person([0.0, 0.0, 1.3])])).unwrap();
        let ev = tr.ingest(&set("b", 0.9, vec![person([0.0, 0.0, 1.3])])).unwrap();
        assert!(matches!(ev[0], TrackEvent::Updated { .. }));
        let t = &tr.tracks()[0];
        assert_eq!(t.centroid_filter.last_update, Timestamp(1.0));
        assert_eq!(t.last_seen, Timestamp(1.0));
    }

    #[test]
    fn masked_joint_is_predict_only() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.ingest(&set("a", 0.0, vec![person([0.0, 0.0, 1.3])])).unwrap();
        let before = tr.tracks()[0].joint_filters[JointId::L_WRIST.index()].clone().unwrap();
        let mut masked = person([0.02, 0.0, 1.3]);
        masked.joints[JointId::L_WRIST.index()] = None;
        tr.ingest(&set("a", 0.1, vec![masked])).unwrap();
        let after = tr.tracks()[0].joint_filters[JointId::L_WRIST.index()].clone().unwrap();
        let expected = predict(&before, Timestamp(0.1), &NoiseConfig::default()).unwrap();
        assert_eq!(after, expected);
        // the measured neighbour did move
        let neck = tr.tracks()[0].joint_filters[JointId::NECK.index()].as_ref().unwrap();
        assert!(neck.position().x > 0.0);
    }

    #[test]
    fn lazy_joint_initialisation() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        let mut partial = person([0.0, 0.0, 1.3]);
        partial.joints[JointId::HEAD.index()] = None;
        tr.ingest(&set("a", 0.0, vec![partial])).unwrap();
        assert!(tr.tracks()[0].joint_filters[0].is_none());
        tr.ingest(&set("a", 0.1, vec![person([0.0, 0.0, 1.3])])).unwrap();
        let head = tr.tracks()[0].joint_filters[0].as_ref().unwrap();
        assert_eq!(head.last_update, Timestamp(0.1));
    }

    #[test]
    fn snapshot_extrapolates_without_mutating() {
        let mut tr = Tracker::new(TrackerConfig {
            min_hits_to_confirm: 1,
            ..Default::default()
        })
        .unwrap();
        tr.ingest(&set("a", 0.0, vec![person([0.0, 0.0, 1.3])])).unwrap();
        let mut track = tr.tracks[0].clone();
        for f in track.joint_filters.iter_mut().flatten() {
            f.mean[3] = 1.0;
        }
        tr.tracks[0] = track;
        let before = tr.tracks().to_vec();
        let at_seen = tr.snapshot(Timestamp(0.0));
        let chest = at_seen.tracks[0].skeleton.joint(JointId::CHEST).unwrap();
        assert_eq!(chest, Point3::new(0.0, 0.0, 1.3));
        let later = tr.snapshot(Timestamp(0.2));
        let chest = later.tracks[0].skeleton.joint(JointId::CHEST).unwrap();
        assert!((chest - Point3::new(0.2, 0.0, 1.3)).norm() < 1e-12);
        assert_eq!(tr.tracks(), &before[..]);
    }

    #[test]
    fn master_thread_serialises_producers() {
        let master = FusionMaster::spawn(TrackerConfig::default()).unwrap();
        let handles: Vec<_> = ["a", "b"]
            .into_iter()
            .map(|cam| {
                let tx = master.sender();
                thread::spawn(move || {
                    for k in 0..20 {
                        tx.send(set(cam, k as f64 * 0.02, vec![person([0.0, 0.0, 1.3])]));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let snap = master.snapshot(Timestamp(0.4)).unwrap();
        assert_eq!(snap.tracks.len(), 1);
        let (tracker, results) = master.finish();
        assert_eq!(results.len(), 40);
        assert!(results.iter().all(|r| r.is_ok()));
        assert_eq!(tracker.tracks().len(), 1);
    }
}
