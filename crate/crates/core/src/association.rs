//! Detection-to-track association: centroids, Mahalanobis costs, optimal
//! assignment and gating.

use std::fmt;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DetectionSet, JointId, Skeleton3D, Timestamp};
use crate::ukf::{innovation_cost, FilterState, NoiseConfig};

/// Identity of a tracked person, unique for the lifetime of a tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Upper bound on the squared Mahalanobis cost of an accepted match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GatingThreshold(f64);

impl GatingThreshold {
    /// 95th percentile of chi-square with 3 degrees of freedom.
    pub const DEFAULT: f64 = 9.49;

    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && !epsilon.is_nan() {
            Ok(GatingThreshold(epsilon))
        } else {
            Err(Error::Config(format!("gating threshold must be positive, got {epsilon}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for GatingThreshold {
    fn default() -> Self {
        GatingThreshold(Self::DEFAULT)
    }
}

impl TryFrom<f64> for GatingThreshold {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        GatingThreshold::new(v)
    }
}

impl From<GatingThreshold> for f64 {
    fn from(g: GatingThreshold) -> f64 {
        g.0
    }
}

/// Partition of detections and tracks after association.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssociationResult {
    /// `(detection index, track)` pairs, ordered by detection index.
    pub matches: Vec<(usize, TrackId)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracks: Vec<TrackId>,
}

/// Torso joints standing in for a missing chest.
///
/// Shoulders and hips are paired per side; when one member of a pair is
/// missing its weight moves to the other before renormalising.
const NECK_WEIGHT: f64 = 0.4;
const SHOULDER_WEIGHT: f64 = 0.1;
const HIP_WEIGHT: f64 = 0.2;

/// Representative point of a skeleton: the chest, or a weighted torso mean.
pub fn centroid(s: &Skeleton3D) -> Option<Point3<f64>> {
    if let Some(chest) = s.joint(JointId::CHEST) {
        return Some(chest);
    }
    let mut terms: Vec<(Point3<f64>, f64)> = Vec::with_capacity(5);
    if let Some(neck) = s.joint(JointId::NECK) {
        terms.push((neck, NECK_WEIGHT));
    }
    for (shoulder, hip) in [
        (JointId::R_SHOULDER, JointId::R_HIP),
        (JointId::L_SHOULDER, JointId::L_HIP),
    ] {
        match (s.joint(shoulder), s.joint(hip)) {
            (Some(sh), Some(hp)) => {
                terms.push((sh, SHOULDER_WEIGHT));
                terms.push((hp, HIP_WEIGHT));
            }
            (Some(sh), None) => terms.push((sh, SHOULDER_WEIGHT + HIP_WEIGHT)),
            (None, Some(hp)) => terms.push((hp, SHOULDER_WEIGHT + HIP_WEIGHT)),
            (None, None) => {}
        }
    }
    let total: f64 = terms.iter().map(|(_, w)| w).sum();
    if total == 0.0 {
        return None;
    }
    let sum = terms
        .iter()
        .fold(Vector3::zeros(), |acc, (p, w)| acc + p.coords * *w);
    Some(Point3::from(sum / total))
}

/// Cost of pairing each track (rows) with each detection (columns).
///
/// Detections without a centroid cost `+inf` against every track.
pub fn build_cost_matrix(
    tracks: &[&FilterState],
    dets: &[Skeleton3D],
    t: Timestamp,
    cfg: &NoiseConfig,
) -> Result<Vec<Vec<f64>>> {
    let centroids: Vec<_> = dets.iter().map(centroid).collect();
    tracks
        .iter()
        .map(|track| {
            // stale detections are scored against the filter's own time
            let at = t.max(track.last_update);
            centroids
                .iter()
                .map(|c| match c {
                    Some(p) => innovation_cost(track, &p.coords, at, cfg),
                    None => Ok(f64::INFINITY),
                })
                .collect()
        })
        .collect()
}

/// Minimum-cost one-to-one assignment of rows to columns.
///
/// Works on rectangular matrices; the larger side keeps unassigned entries.
/// Non-finite entries are replaced by a sentinel larger than any sum of
/// finite entries, so they are only used when unavoidable, and are then
/// dropped from the result. Returns, per row, the assigned column.
pub fn munkres(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));

    let finite_max = cost
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let sentinel = (finite_max + 1.0) * (rows.max(cols) as f64 + 1.0) * 2.0;
    let entry = |r: usize, c: usize| {
        let v = cost[r][c];
        if v.is_finite() {
            v
        } else {
            sentinel
        }
    };

    let assignment = if rows <= cols {
        hungarian(rows, cols, entry)
    } else {
        let by_col = hungarian(cols, rows, |c, r| entry(r, c));
        let mut by_row = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                by_row[r] = Some(c);
            }
        }
        by_row
    };

    assignment
        .into_iter()
        .enumerate()
        .map(|(r, c)| c.filter(|&c| cost[r][c].is_finite()))
        .collect()
}

/// Shortest augmenting path Hungarian method with dual potentials, `n <= m`.
fn hungarian(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    // 1-based: index 0 is the virtual root column/row.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Associates a detection set with tracks given their centroid filters.
///
/// An optimal pair becomes a match only when its cost is below `eps`.
pub fn data_association(
    dets: &DetectionSet,
    tracks: &[(TrackId, &FilterState)],
    eps: GatingThreshold,
    cfg: &NoiseConfig,
) -> Result<AssociationResult> {
    let filters: Vec<&FilterState> = tracks.iter().map(|(_, f)| *f).collect();
    let cost = build_cost_matrix(&filters, &dets.skeletons, dets.stamp, cfg)?;
    Ok(gate_assignment(
        &cost,
        tracks.iter().map(|(id, _)| *id),
        dets.skeletons.len(),
        eps,
    ))
}

/// Solves and gates an already built cost matrix.
pub fn gate_assignment(
    cost: &[Vec<f64>],
    track_ids: impl IntoIterator<Item = TrackId>,
    n_dets: usize,
    eps: GatingThreshold,
) -> AssociationResult {
    let track_ids: Vec<TrackId> = track_ids.into_iter().collect();
    let assignment = munkres(cost);

    let mut det_matched = vec![false; n_dets];
    let mut result = AssociationResult::default();
    for (row, col) in assignment.iter().enumerate() {
        match col {
            Some(c) if cost[row][*c] < eps.value() => {
                det_matched[*c] = true;
                result.matches.push((*c, track_ids[row]));
            }
            _ => result.unmatched_tracks.push(track_ids[row]),
        }
    }
    result.matches.sort_by_key(|(d, _)| *d);
    result.unmatched_detections = (0..n_dets).filter(|d| !det_matched[*d]).collect();
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Frame;
    use crate::ukf::init_filter;

    fn total(cost: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| cost[r][c]))
            .sum()
    }

    #[test]
    fn centroid_prefers_chest() {
        let mut s = Skeleton3D::empty(Frame::World);
        s.joints[14] = Some(Point3::new(1.0, 1.0, 1.0));
        s.joints[1] = Some(Point3::new(5.0, 5.0, 5.0));
        assert_eq!(centroid(&s), Some(Point3::new(1.0, 1.0, 1.0)));
    }

    #[test]
    fn centroid_fallback_weights() {
        // neck 0.4, each hip 0.2 + its missing shoulder's 0.1 = 0.3
        let mut s = Skeleton3D::empty(Frame::World);
        s.joints[JointId::NECK.index()] = Some(Point3::new(0.0, 0.0, 2.0));
        s.joints[JointId::R_HIP.index()] = Some(Point3::new(0.0, 0.0, 1.0));
        s.joints[JointId::L_HIP.index()] = Some(Point3::new(0.0, 0.0, 1.0));
        let c = centroid(&s).unwrap();
        assert!((c - Point3::new(0.0, 0.0, 1.4)).norm() < 1e-12, "{c}");

        // full torso: 0.4*2 + 0.1*1.5*2 + 0.2*1*2 = 1.5
        s.joints[JointId::R_SHOULDER.index()] = Some(Point3::new(0.0, 0.0, 1.5));
        s.joints[JointId::L_SHOULDER.index()] = Some(Point3::new(0.0, 0.0, 1.5));
        let c = centroid(&s).unwrap();
        assert!((c.z - 1.5).abs() < 1e-12);

        // neck alone
        let mut n = Skeleton3D::empty(Frame::World);
        n.joints[1] = Some(Point3::new(3.0, 2.0, 1.0));
        assert!((centroid(&n).unwrap() - Point3::new(3.0, 2.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn centroid_missing_without_torso() {
        let mut s = Skeleton3D::empty(Frame::World);
        s.joints[JointId::HEAD.index()] = Some(Point3::origin());
        s.joints[JointId::L_WRIST.index()] = Some(Point3::origin());
        assert_eq!(centroid(&s), None);
    }

    #[test]
    fn munkres_small_examples() {
        let c = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let a = munkres(&c);
        assert_eq!(a, vec![Some(0), Some(1)]);
        assert_eq!(total(&c, &a), 2.0);

        let c = vec![vec![4.0, 1.0], vec![1.0, 4.0]];
        let a = munkres(&c);
        assert_eq!(a, vec![Some(1), Some(0)]);
        assert_eq!(total(&c, &a), 2.0);
    }

    #[test]
    fn munkres_rectangular_both_ways() {
        let wide = vec![vec![5.0, 1.0, 3.0], vec![2.0, 4.0, 0.5]];
        assert_eq!(munkres(&wide), vec![Some(1), Some(2)]);
        let tall = vec![vec![5.0, 2.0], vec![1.0, 4.0], vec![3.0, 0.5]];
        assert_eq!(munkres(&tall), vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn munkres_never_assigns_sentinels() {
        let inf = f64::INFINITY;
        let c = vec![vec![inf, 1.0], vec![inf, 2.0]];
        let a = munkres(&c);
        assert_eq!(a.iter().filter(|x| x.is_some()).count(), 1);
        assert_eq!(a, vec![Some(1), None]);
        assert_eq!(munkres(&[vec![inf]]), vec![None]);
        assert_eq!(munkres(&[]), Vec::<Option<usize>>::new());
    }

    #[test]
    fn munkres_ties_resolve_deterministically() {
        let c = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(munkres(&c), munkres(&c));
    }

    fn det_at(points: &[[f64; 3]]) -> DetectionSet {
        DetectionSet {
            camera_id: "c".into(),
            stamp: Timestamp(0.0),
            skeletons: points
                .iter()
                .map(|p| {
                    let mut s = Skeleton3D::empty(Frame::World);
                    s.joints[14] = Some(Point3::from(*p));
                    s
                })
                .collect(),
        }
    }

    #[test]
    fn cost_matrix_shapes() {
        let cfg = NoiseConfig::default();
        let dets = det_at(&[[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]);
        let c = build_cost_matrix(&[], &dets.skeletons, Timestamp(0.0), &cfg).unwrap();
        assert!(c.is_empty());

        let f = init_filter(&Vector3::new(0.0, 0.0, 1.0), Timestamp(0.0), &cfg).unwrap();
        let c = build_cost_matrix(&[&f], &dets.skeletons, Timestamp(0.0), &cfg).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0][0].abs() < 1e-20);
        assert!(c[0][1] > 0.0);

        let mut headless = Skeleton3D::empty(Frame::World);
        headless.joints[JointId::L_ANKLE.index()] = Some(Point3::origin());
        let c = build_cost_matrix(&[&f], &[headless], Timestamp(0.0), &cfg).unwrap();
        assert_eq!(c[0][0], f64::INFINITY);
    }

    #[test]
    fn association_without_tracks() {
        let cfg = NoiseConfig::default();
        let dets = det_at(&[[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]);
        let r = data_association(&dets, &[], GatingThreshold::default(), &cfg).unwrap();
        assert!(r.matches.is_empty());
        assert_eq!(r.unmatched_detections, vec![0, 1]);
        assert!(r.unmatched_tracks.is_empty());
    }

    #[test]
    fn association_gates_far_detection() {
        let cfg = NoiseConfig::default();
        let eps = GatingThreshold::default();
        let f = init_filter(&Vector3::new(0.0, 0.0, 1.0), Timestamp(0.0), &cfg).unwrap();
        // innovation variance is 2 * meas_sigma^2 per axis at dt = 0
        let s = 2.0 * cfg.meas_sigma * cfg.meas_sigma;
        let far = (10.0 * eps.value() * s).sqrt();
        let dets = det_at(&[[0.0, 0.0, 1.0], [far, 0.0, 1.0]]);
        let tracks = [(TrackId(7), &f)];
        let r = data_association(&dets, &tracks, eps, &cfg).unwrap();
        assert_eq!(r.matches, vec![(0, TrackId(7))]);
        assert_eq!(r.unmatched_detections, vec![1]);
        assert!(r.unmatched_tracks.is_empty());

        // the only detection is the far one: assigned by Munkres, rejected by the gate
        let dets = det_at(&[[far, 0.0, 1.0]]);
        let r = data_association(&dets, &tracks, eps, &cfg).unwrap();
        assert!(r.matches.is_empty());
        assert_eq!(r.unmatched_detections, vec![0]);
        assert_eq!(r.unmatched_tracks, vec![TrackId(7)]);
    }

    #[test]
    fn association_with_empty_detection_set() {
        let cfg = NoiseConfig::default();
        let f = init_filter(&Vector3::zeros(), Timestamp(0.0), &cfg).unwrap();
        let r = data_association(&det_at(&[]), &[(TrackId(1), &f)], GatingThreshold::default(), &cfg).unwrap();
        assert_eq!(r.unmatched_tracks, vec![TrackId(1)]);
        assert!(r.unmatched_detections.is_empty());
    }
}
