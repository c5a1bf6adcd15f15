//! The three pipeline stages. Each reads files, computes everything in memory
//! and only then writes its outputs, so a failed run leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use skelfuse::evaluation::{evaluate, EvalConfig, EvalReport};
use skelfuse::model::Timestamp;
use skelfuse::sim::{bundled_scenario, frame_times, run_scenario, ScenarioConfig};
use skelfuse::tracker::{TrackEvent, Tracker, TrackerConfig};
use skelfuse::{Error, Result};

use crate::formats::{
    joints_to_records, read_stream, to_jsonl, CalibrationFile, DetectionRecord, SnapshotRecord, TruthPerson,
    TruthRecord,
};

pub const STREAM_FILE: &str = "stream.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const CALIB_FILE: &str = "calib.json";
pub const SCENARIO_FILE: &str = "scenario.toml";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOTS_FILE: &str = "snapshots.jsonl";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

/// Exit status for a failed command: 2 for bad input, 1 for I/O trouble.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 1,
        _ => 2,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes `files` under `dir`, creating it if needed.
fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    let io = |path: &Path, e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Loads a scenario from a file, or by bundled name when no such file exists.
pub fn load_scenario(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    let cfg = if path.exists() {
        ScenarioConfig::from_toml_str(&read_text(path)?, spec)?
    } else {
        bundled_scenario(spec).ok_or_else(|| Error::Io {
            path: spec.to_string(),
            message: "no such file or bundled scenario".into(),
        })?
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_tracker_config(path: Option<&Path>) -> Result<TrackerConfig> {
    let cfg = match path {
        None => TrackerConfig::default(),
        Some(p) => {
            let text = read_text(p)?;
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: p.display().to_string(),
                line: e
                    .span()
                    .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                    .unwrap_or(0),
                message: e.message().to_string(),
            })?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_eval_config(path: Option<&Path>) -> Result<EvalConfig> {
    match path {
        None => Ok(EvalConfig::default()),
        Some(p) => EvalConfig::from_toml_str(&read_text(p)?, &p.display().to_string()),
    }
}

/// Knobs shared by the commands that run a scenario.
#[derive(Debug, Clone, Default)]
pub struct ScenarioOverrides {
    pub seed: Option<u64>,
    pub cameras: Option<Vec<String>>,
}

impl ScenarioOverrides {
    pub fn apply(&self, cfg: &ScenarioConfig) -> Result<ScenarioConfig> {
        let mut out = match &self.cameras {
            Some(ids) => cfg.with_cameras(ids)?,
            None => cfg.clone(),
        };
        if let Some(seed) = self.seed {
            out.seed = seed;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub detection_sets: usize,
    pub cameras: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Runs a scenario and writes its stream, truth, calibration and the
/// effective scenario (with overrides applied) to `out`.
pub fn simulate(cfg: &ScenarioConfig, out: &Path) -> Result<SimulateSummary> {
    let run = run_scenario(cfg)?;
    let records: Vec<DetectionRecord> = run
        .events
        .iter()
        .map(|e| DetectionRecord::from_set(&e.detections, Some(e.arrival)))
        .collect();

    let mut stamps: Vec<f64> = run
        .cameras
        .iter()
        .flat_map(|c| frame_times(c, cfg.duration))
        .collect();
    stamps.sort_by(f64::total_cmp);
    stamps.dedup();
    let mut truth = Vec::with_capacity(stamps.len());
    for t in stamps {
        let persons = (0..run.truth.person_count())
            .map(|p| {
                Ok(TruthPerson {
                    person: p,
                    joints: joints_to_records(&run.truth.truth_at(p, Timestamp(t))?),
                })
            })
            .collect::<Result<_>>()?;
        truth.push(TruthRecord { stamp: t, persons });
    }

    let calib = CalibrationFile::new(run.cameras.iter().map(|c| c.model.clone()).collect());
    let files = write_outputs(
        out,
        &[
            (STREAM_FILE, to_jsonl(&records)),
            (TRUTH_FILE, to_jsonl(&truth)),
            (CALIB_FILE, calib.to_json()),
            (SCENARIO_FILE, cfg.to_toml_string()),
        ],
    )?;
    Ok(SimulateSummary {
        detection_sets: records.len(),
        cameras: run.cameras.iter().map(|c| c.model.id.clone()).collect(),
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSummary {
    pub ingested: usize,
    pub rejected: usize,
    pub tracks_created: usize,
    /// Confirmed tracks in the last snapshot.
    pub final_tracks: usize,
    pub files: Vec<PathBuf>,
}

/// Replays a detection stream through the tracker.
///
/// Detection sets are ingested in file order. A snapshot is taken every
/// `1 / snapshot_hz` seconds, after every set that arrived by then; sets
/// without an `arrival` count as arriving at their stamp.
pub fn track(
    stream_text: &str,
    stream_path: &str,
    calib: &CalibrationFile,
    cfg: &TrackerConfig,
    snapshot_hz: f64,
    out: &Path,
) -> Result<TrackSummary> {
    if !(snapshot_hz > 0.0 && snapshot_hz.is_finite()) {
        return Err(Error::Config(format!("snapshot rate must be positive, got {snapshot_hz}")));
    }
    let stream = read_stream(stream_text, stream_path)?;
    let mut sets = Vec::with_capacity(stream.len());
    for (line, rec) in &stream {
        if calib.camera(&rec.camera_id).is_none() {
            return Err(Error::Parse {
                path: stream_path.to_string(),
                line: *line,
                message: format!("camera `{}` is not in the calibration", rec.camera_id),
            });
        }
        let set = rec.to_set().expect("validated by read_stream");
        sets.push((rec.arrival.unwrap_or(rec.stamp), set));
    }

    let mut tracker = Tracker::new(cfg.clone())?;
    let mut events: Vec<TrackEvent> = Vec::new();
    let mut snapshots: Vec<SnapshotRecord> = Vec::new();
    let mut rejected = 0;
    let mut next = 0;
    if let Some(first) = sets.first() {
        let end = sets.iter().map(|s| s.0).fold(first.0, f64::max);
        let mut k = (first.0.max(0.0) * snapshot_hz).ceil() as u64;
        loop {
            let t = k as f64 / snapshot_hz;
            while next < sets.len() && sets[next].0 <= t {
                match tracker.ingest(&sets[next].1) {
                    Ok(ev) => events.extend(ev),
                    Err(e) => {
                        log::warn!("{stream_path}:{}: {e}", stream[next].0);
                        rejected += 1;
                    }
                }
                next += 1;
            }
            snapshots.push(SnapshotRecord::from_snapshot(&tracker.snapshot(Timestamp(t))));
            if t >= end {
                break;
            }
            k += 1;
        }
    }

    let tracks_created = events
        .iter()
        .filter(|e| matches!(e, TrackEvent::Created { .. }))
        .count();
    let final_tracks = snapshots.last().map_or(0, |s| s.tracks.len());
    let files = write_outputs(out, &[(EVENTS_FILE, to_jsonl(&events)), (SNAPSHOTS_FILE, to_jsonl(&snapshots))])?;
    Ok(TrackSummary {
        ingested: sets.len() - rejected,
        rejected,
        tracks_created,
        final_tracks,
        files,
    })
}

/// Runs the evaluation; with `out`, writes both report renderings there.
pub fn evaluate_to(cfg: &ScenarioConfig, eval: &EvalConfig, out: Option<&Path>) -> Result<(EvalReport, Vec<PathBuf>)> {
    let report = evaluate(cfg, eval)?;
    let files = match out {
        Some(dir) => write_outputs(dir, &[(REPORT_CSV, report.to_csv()), (REPORT_TXT, report.to_table())])?,
        None => Vec::new(),
    };
    Ok((report, files))
}
