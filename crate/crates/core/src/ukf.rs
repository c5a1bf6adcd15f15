//! Unscented Kalman filter for one 3D point under constant-velocity motion.
//!
//! State is `[px, py, pz, vx, vy, vz]`; the measurement is the position.
//! Process noise follows the continuous white-acceleration model, whose
//! discretisation composes exactly: predicting over `a + b` seconds equals
//! predicting over `a` then `b`.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Timestamp;

const STATE_DIM: usize = 6;
const SIGMA_COUNT: usize = 2 * STATE_DIM + 1;

type Matrix6x3 = SMatrix<f64, 6, 3>;

/// Noise and unscented-transform parameters shared by every filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// White-acceleration intensity, m/s^2.
    pub process_accel_sigma: f64,
    /// Isotropic position measurement std, m.
    pub meas_sigma: f64,
    /// Prior velocity std at track birth, m/s.
    pub init_velocity_sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            process_accel_sigma: 2.0,
            meas_sigma: 0.05,
            init_velocity_sigma: 1.0,
            alpha: 0.1,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.process_accel_sigma, "process_accel_sigma")?;
        positive(self.meas_sigma, "meas_sigma")?;
        positive(self.init_velocity_sigma, "init_velocity_sigma")?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !self.beta.is_finite() || !self.kappa.is_finite() {
            return Err(Error::Config("beta and kappa must be finite".into()));
        }
        if !(self.alpha * self.alpha * (STATE_DIM as f64 + self.kappa) > 0.0) {
            return Err(Error::Config("alpha^2 (n + kappa) must be positive".into()));
        }
        Ok(())
    }

    fn weights(&self) -> SigmaWeights {
        let n = STATE_DIM as f64;
        let lambda = self.alpha * self.alpha * (n + self.kappa) - n;
        let scale = n + lambda;
        let mean0 = lambda / scale;
        SigmaWeights {
            scale,
            mean0,
            cov0: mean0 + (1.0 - self.alpha * self.alpha + self.beta),
            rest: 0.5 / scale,
        }
    }

    fn measurement_covariance(&self) -> Matrix3<f64> {
        Matrix3::identity() * (self.meas_sigma * self.meas_sigma)
    }
}

struct SigmaWeights {
    scale: f64,
    mean0: f64,
    cov0: f64,
    rest: f64,
}

impl SigmaWeights {
    fn mean(&self, i: usize) -> f64 {
        if i == 0 {
            self.mean0
        } else {
            self.rest
        }
    }

    fn cov(&self, i: usize) -> f64 {
        if i == 0 {
            self.cov0
        } else {
            self.rest
        }
    }
}

/// Mean, covariance and time of validity of one filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub mean: Vector6<f64>,
    pub covariance: Matrix6<f64>,
    pub last_update: Timestamp,
}

impl FilterState {
    pub fn position(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(3).into_owned()
    }

    pub fn position_covariance(&self) -> Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(0, 0).into_owned()
    }
}

/// Transition matrix of the constant-velocity model.
pub fn transition(dt: f64) -> Matrix6<f64> {
    let mut f = Matrix6::identity();
    for i in 0..3 {
        f[(i, i + 3)] = dt;
    }
    f
}

/// Process covariance of continuous white acceleration integrated over `dt`.
pub fn process_noise(dt: f64, accel_sigma: f64) -> Matrix6<f64> {
    let q = accel_sigma * accel_sigma;
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        m[(i, i)] = q * dt * dt * dt / 3.0;
        m[(i, i + 3)] = q * dt * dt / 2.0;
        m[(i + 3, i)] = q * dt * dt / 2.0;
        m[(i + 3, i + 3)] = q * dt;
    }
    m
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

fn check_pd(m: Matrix6<f64>, what: &'static str) -> Result<Matrix6<f64>> {
    let m = symmetrize(&m);
    if m.iter().any(|v| !v.is_finite()) || m.cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(what));
    }
    Ok(m)
}

fn sigma_points(mean: &Vector6<f64>, cov: &Matrix6<f64>, w: &SigmaWeights) -> Result<[Vector6<f64>; SIGMA_COUNT]> {
    let chol = (cov * w.scale)
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("sigma point spread"))?;
    let l = chol.l();
    let mut pts = [*mean; SIGMA_COUNT];
    for i in 0..STATE_DIM {
        let col = l.column(i);
        pts[1 + i] = mean + col;
        pts[1 + STATE_DIM + i] = mean - col;
    }
    Ok(pts)
}

/// Weighted mean taken relative to the centre point to limit cancellation.
fn weighted_mean<const D: usize>(pts: &[SVector<f64, D>; SIGMA_COUNT], w: &SigmaWeights) -> SVector<f64, D> {
    let base = pts[0];
    let mut acc = SVector::<f64, D>::zeros();
    for (i, p) in pts.iter().enumerate().skip(1) {
        acc += (p - base) * w.mean(i);
    }
    base + acc
}

fn propagate(pts: &[Vector6<f64>; SIGMA_COUNT], dt: f64) -> [Vector6<f64>; SIGMA_COUNT] {
    let f = transition(dt);
    pts.map(|p| f * p)
}

fn measure(pts: &[Vector6<f64>; SIGMA_COUNT]) -> [Vector3<f64>; SIGMA_COUNT] {
    pts.map(|p| p.fixed_rows::<3>(0).into_owned())
}

/// Starts a filter at `z0` with zero velocity.
pub fn init_filter(z0: &Vector3<f64>, t0: Timestamp, cfg: &NoiseConfig) -> Result<FilterState> {
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial position"));
    }
    let mut cov = Matrix6::zeros();
    let pos_var = cfg.meas_sigma * cfg.meas_sigma;
    let vel_var = cfg.init_velocity_sigma * cfg.init_velocity_sigma;
    for i in 0..3 {
        cov[(i, i)] = pos_var;
        cov[(i + 3, i + 3)] = vel_var;
    }
    let mut mean = Vector6::zeros();
    mean.fixed_rows_mut::<3>(0).copy_from(z0);
    Ok(FilterState {
        mean,
        covariance: cov,
        last_update: t0,
    })
}

/// Propagates the state forward to `t`.
pub fn predict(s: &FilterState, t: Timestamp, cfg: &NoiseConfig) -> Result<FilterState> {
    let dt = t.seconds() - s.last_update.seconds();
    if dt < 0.0 {
        return Err(Error::TimeRegression {
            current: s.last_update.seconds(),
            requested: t.seconds(),
        });
    }
    if dt == 0.0 {
        return Ok(FilterState {
            last_update: t,
            ..s.clone()
        });
    }
    let w = cfg.weights();
    let pts = propagate(&sigma_points(&s.mean, &s.covariance, &w)?, dt);
    let mean = weighted_mean(&pts, &w);
    let mut cov = process_noise(dt, cfg.process_accel_sigma);
    for (i, p) in pts.iter().enumerate() {
        let d = p - mean;
        cov += d * d.transpose() * w.cov(i);
    }
    Ok(FilterState {
        mean,
        covariance: check_pd(cov, "predicted covariance")?,
        last_update: t,
    })
}

/// Predicted measurement and innovation covariance of a state already at measurement time.
fn innovation_stats(s: &FilterState, cfg: &NoiseConfig) -> Result<(Vector3<f64>, Matrix3<f64>, Matrix6x3)> {
    let w = cfg.weights();
    let pts = sigma_points(&s.mean, &s.covariance, &w)?;
    let zs = measure(&pts);
    let z_mean = weighted_mean(&zs, &w);
    let x_mean = weighted_mean(&pts, &w);
    let mut s_zz = cfg.measurement_covariance();
    let mut p_xz = Matrix6x3::zeros();
    for i in 0..SIGMA_COUNT {
        let dz = zs[i] - z_mean;
        s_zz += dz * dz.transpose() * w.cov(i);
        p_xz += (pts[i] - x_mean) * dz.transpose() * w.cov(i);
    }
    Ok((z_mean, symmetrize(&s_zz), p_xz))
}

/// Fuses a position measurement into a state that is already at measurement time.
pub fn update(s: &FilterState, z: &Vector3<f64>, cfg: &NoiseConfig) -> Result<FilterState> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement"));
    }
    let (z_mean, s_zz, p_xz) = innovation_stats(s, cfg)?;
    let s_inv = s_zz
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("innovation covariance"))?
        .inverse();
    let gain = p_xz * s_inv;
    let mean = s.mean + gain * (z - z_mean);
    let cov = s.covariance - gain * s_zz * gain.transpose();
    Ok(FilterState {
        mean,
        covariance: check_pd(cov, "posterior covariance")?,
        last_update: s.last_update,
    })
}

/// Squared Mahalanobis distance of `z` from the filter's prediction at `t`.
///
/// The filter itself is left untouched.
pub fn innovation_cost(s: &FilterState, z: &Vector3<f64>, t: Timestamp, cfg: &NoiseConfig) -> Result<f64> {
    let predicted = predict(s, t, cfg)?;
    let (z_mean, s_zz, _) = innovation_stats(&predicted, cfg)?;
    mahalanobis_sq(&(z - z_mean), &s_zz)
}

/// `v^T S^-1 v` via a Cholesky solve.
pub fn mahalanobis_sq(v: &Vector3<f64>, s: &Matrix3<f64>) -> Result<f64> {
    let chol = s.cholesky().ok_or(Error::NotPositiveDefinite("innovation covariance"))?;
    Ok(v.dot(&chol.solve(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NoiseConfig {
        NoiseConfig::default()
    }

    fn moving(pos: [f64; 3], vel: [f64; 3]) -> FilterState {
        let mut s = init_filter(&Vector3::from(pos), Timestamp(0.0), &cfg()).unwrap();
        s.mean.fixed_rows_mut::<3>(3).copy_from(&Vector3::from(vel));
        s
    }

    #[test]
    fn init_sets_position_and_zero_velocity() {
        let z = Vector3::new(1.0, 2.0, 3.0);
        let a = init_filter(&z, Timestamp(0.5), &cfg()).unwrap();
        assert_eq!(a.position(), z);
        assert_eq!(a.velocity(), Vector3::zeros());
        assert!(a.covariance.cholesky().is_some());
        assert_eq!(a, init_filter(&z, Timestamp(0.5), &cfg()).unwrap());
        assert!(init_filter(&Vector3::new(f64::NAN, 0.0, 0.0), Timestamp(0.0), &cfg()).is_err());
    }

    #[test]
    fn zero_dt_predict_is_identity() {
        let s = moving([1.0, 1.0, 1.0], [0.3, 0.0, -0.2]);
        let p = predict(&s, Timestamp(0.0), &cfg()).unwrap();
        assert_eq!(p, s);
    }

    #[test]
    fn predict_moves_with_velocity() {
        let s = moving([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        let p = predict(&s, Timestamp(0.5), &cfg()).unwrap();
        assert!((p.position() - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(p.last_update, Timestamp(0.5));
    }

    #[test]
    fn predict_rejects_time_regression() {
        let s = init_filter(&Vector3::zeros(), Timestamp(1.0), &cfg()).unwrap();
        assert!(matches!(
            predict(&s, Timestamp(0.9), &cfg()),
            Err(Error::TimeRegression { .. })
        ));
    }

    #[test]
    fn predict_grows_position_uncertainty() {
        let s = moving([0.0, 1.0, 2.0], [0.5, 0.1, 0.0]);
        let p = predict(&s, Timestamp(0.3), &cfg()).unwrap();
        let diff = p.position_covariance() - s.position_covariance();
        let eig = diff.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|e| *e > 0.0), "{:?}", eig.eigenvalues);
    }

    #[test]
    fn zero_innovation_update_keeps_mean_and_shrinks_covariance() {
        let s = moving([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]);
        let u = update(&s, &Vector3::new(1.0, 2.0, 3.0), &cfg()).unwrap();
        assert!((u.position() - s.position()).norm() < 1e-12);
        assert!(u.position_covariance().trace() < s.position_covariance().trace());
    }

    #[test]
    fn update_rejects_non_finite_measurement() {
        let s = moving([0.0; 3], [0.0; 3]);
        assert!(matches!(
            update(&s, &Vector3::new(0.0, f64::INFINITY, 0.0), &cfg()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn repeated_updates_converge_monotonically() {
        let target = Vector3::new(0.4, -0.2, 1.0);
        let mut s = moving([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]);
        let d0 = (s.position() - target).norm();
        let mut last = d0;
        for k in 1..=40 {
            s = update(&s, &target, &cfg()).unwrap();
            let d = (s.position() - target).norm();
            assert!(d < last, "update {k}: {d} >= {last}");
            // prior and measurement variances start equal, so this is a running mean
            assert!((d - d0 / (k as f64 + 1.0)).abs() < 1e-9 * d0);
            last = d;
        }
    }

    #[test]
    fn tracking_a_fixed_point_over_time_converges() {
        // velocity overshoot makes this non-monotone, but it must settle
        let target = Vector3::new(0.4, -0.2, 1.0);
        let mut s = moving([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]);
        for k in 1..=90 {
            s = predict(&s, Timestamp(k as f64 / 30.0), &cfg()).unwrap();
            s = update(&s, &target, &cfg()).unwrap();
        }
        assert!((s.position() - target).norm() < 1e-3);
        assert!(s.velocity().norm() < 0.05);
    }

    #[test]
    fn cost_is_zero_at_prediction() {
        let s = moving([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        let c = innovation_cost(&s, &Vector3::new(1.2, 0.0, 0.0), Timestamp(0.2), &cfg()).unwrap();
        assert!(c.abs() < 1e-20);
    }

    #[test]
    fn cost_with_unit_innovation_covariance_is_squared_distance() {
        let cfg = cfg();
        let mut s = moving([0.0; 3], [0.0; 3]);
        let pos_var = 1.0 - cfg.meas_sigma * cfg.meas_sigma;
        for i in 0..3 {
            s.covariance[(i, i)] = pos_var;
        }
        let z = Vector3::new(0.5, -1.0, 2.0);
        let c = innovation_cost(&s, &z, Timestamp(0.0), &cfg).unwrap();
        assert!((c - z.norm_squared()).abs() < 1e-12, "{c}");
    }

    #[test]
    fn cost_does_not_mutate_state() {
        let s = moving([0.0; 3], [1.0, 0.0, 0.0]);
        let before = s.clone();
        innovation_cost(&s, &Vector3::new(0.1, 0.0, 0.0), Timestamp(1.0), &cfg()).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(NoiseConfig { meas_sigma: 0.0, ..cfg() }.validate().is_err());
        assert!(NoiseConfig { alpha: 1.5, ..cfg() }.validate().is_err());
        assert!(NoiseConfig { kappa: -6.0, ..cfg() }.validate().is_err());
    }
}
