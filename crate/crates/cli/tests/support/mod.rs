//! Reference implementations used by the acceptance suite. They share no code
//! with the library: plain arrays, exhaustive search and full scans.

#![allow(dead_code, clippy::needless_range_loop)]

pub type M3 = [[f64; 3]; 3];
pub type M6 = [[f64; 6]; 6];

/// Textbook linear Kalman filter for a 3-D constant-velocity target.
#[derive(Debug, Clone)]
pub struct LinearKf {
    pub x: [f64; 6],
    pub p: M6,
}

impl LinearKf {
    pub fn new(z: [f64; 3], pos_sigma: f64, vel_sigma: f64) -> Self {
        let mut p = [[0.0; 6]; 6];
        for i in 0..3 {
            p[i][i] = pos_sigma * pos_sigma;
            p[i + 3][i + 3] = vel_sigma * vel_sigma;
        }
        LinearKf {
            x: [z[0], z[1], z[2], 0.0, 0.0, 0.0],
            p,
        }
    }

    pub fn predict(&mut self, dt: f64, accel_sigma: f64) {
        let mut f = [[0.0; 6]; 6];
        for i in 0..6 {
            f[i][i] = 1.0;
        }
        for i in 0..3 {
            f[i][i + 3] = dt;
        }
        let q = accel_sigma * accel_sigma;
        let mut qm = [[0.0; 6]; 6];
        for i in 0..3 {
            qm[i][i] = q * dt.powi(3) / 3.0;
            qm[i][i + 3] = q * dt.powi(2) / 2.0;
            qm[i + 3][i] = q * dt.powi(2) / 2.0;
            qm[i + 3][i + 3] = q * dt;
        }
        let mut x = [0.0; 6];
        for i in 0..6 {
            for j in 0..6 {
                x[i] += f[i][j] * self.x[j];
            }
        }
        self.x = x;
        let fp = mul6(&f, &self.p);
        let mut p = mul6(&fp, &t6(&f));
        for i in 0..6 {
            for j in 0..6 {
                p[i][j] += qm[i][j];
            }
        }
        self.p = p;
    }

    /// Innovation and its covariance for a position measurement.
    pub fn innovation(&self, z: [f64; 3], meas_sigma: f64) -> ([f64; 3], M3) {
        let mut s = [[0.0; 3]; 3];
        let mut y = [0.0; 3];
        for i in 0..3 {
            y[i] = z[i] - self.x[i];
            for j in 0..3 {
                s[i][j] = self.p[i][j];
            }
            s[i][i] += meas_sigma * meas_sigma;
        }
        (y, s)
    }

    pub fn update(&mut self, z: [f64; 3], meas_sigma: f64) {
        let (y, s) = self.innovation(z, meas_sigma);
        let si = inv3(&s);
        // K = P H^T S^-1, with H selecting the position block
        let mut k = [[0.0; 3]; 6];
        for i in 0..6 {
            for j in 0..3 {
                for l in 0..3 {
                    k[i][j] += self.p[i][l] * si[l][j];
                }
            }
        }
        for i in 0..6 {
            for j in 0..3 {
                self.x[i] += k[i][j] * y[j];
            }
        }
        // P = (I - K H) P
        let mut p = self.p;
        for i in 0..6 {
            for j in 0..6 {
                let mut khp = 0.0;
                for l in 0..3 {
                    khp += k[i][l] * self.p[l][j];
                }
                p[i][j] -= khp;
            }
        }
        self.p = p;
    }

    pub fn cost(&self, z: [f64; 3], meas_sigma: f64) -> f64 {
        let (y, s) = self.innovation(z, meas_sigma);
        let si = inv3(&s);
        let mut c = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                c += y[i] * si[i][j] * y[j];
            }
        }
        c
    }
}

fn mul6(a: &M6, b: &M6) -> M6 {
    let mut c = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            for k in 0..6 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn t6(a: &M6) -> M6 {
    let mut c = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            c[i][j] = a[j][i];
        }
    }
    c
}

/// Inverse by adjugate.
pub fn inv3(m: &M3) -> M3 {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = cof[j][i] / det;
        }
    }
    inv
}

/// Every maximal one-to-one pairing of rows with columns, scored as
/// (number of infinite pairs, sum of the finite ones).
pub fn all_assignments(cost: &[Vec<f64>]) -> Vec<(usize, f64, Vec<Option<usize>>)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    let mut current = vec![None; rows];
    let mut used = vec![false; cols];
    let pairs = rows.min(cols);
    fn rec(
        cost: &[Vec<f64>],
        row: usize,
        placed: usize,
        pairs: usize,
        current: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        out: &mut Vec<(usize, f64, Vec<Option<usize>>)>,
    ) {
        let rows = cost.len();
        if row == rows {
            if placed == pairs {
                let mut inf = 0;
                let mut sum = 0.0;
                for (r, c) in current.iter().enumerate() {
                    if let Some(c) = c {
                        let v = cost[r][*c];
                        if v.is_finite() {
                            sum += v;
                        } else {
                            inf += 1;
                        }
                    }
                }
                out.push((inf, sum, current.clone()));
            }
            return;
        }
        // rows left must still be able to fill the required pairs
        if placed + (rows - row) > pairs {
            current[row] = None;
            rec(cost, row + 1, placed, pairs, current, used, out);
        }
        for c in 0..used.len() {
            if !used[c] && placed < pairs {
                used[c] = true;
                current[row] = Some(c);
                rec(cost, row + 1, placed + 1, pairs, current, used, out);
                used[c] = false;
                current[row] = None;
            }
        }
    }
    rec(cost, 0, 0, pairs, &mut current, &mut used, &mut out);
    out
}

/// Cheapest assignment, and whether it beats every other one by more than `tie`.
pub fn best_assignment(cost: &[Vec<f64>], tie: f64) -> (usize, f64, Vec<Option<usize>>, bool) {
    let mut all = all_assignments(cost);
    all.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let best = all[0].clone();
    let unique = all
        .get(1)
        .is_none_or(|second| second.0 > best.0 || second.1 - best.1 > tie);
    (best.0, best.1, best.2, unique)
}

/// Lower median of the valid samples strictly inside the disk, by full scan and sort.
pub fn median_oracle(values: &[f64], width: usize, height: usize, cx: f64, cy: f64, r: f64) -> Option<f64> {
    let mut samples = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let d = values[y * width + x];
            let inside = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < r * r;
            if inside && d.is_finite() && d > 0.0 {
                samples.push(d);
            }
        }
    }
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if samples.is_empty() {
        None
    } else {
        Some(samples[(samples.len() - 1) / 2])
    }
}

/// Chest, else the weighted torso mean (neck 0.4, shoulders 0.1, hips 0.2),
/// with a missing shoulder/hip passing its weight to the same-side partner.
pub fn centroid_oracle(joints: &[Option<[f64; 3]>; 15]) -> Option<[f64; 3]> {
    if let Some(c) = joints[14] {
        return Some(c);
    }
    let mut acc = [0.0; 3];
    let mut total = 0.0;
    let mut add = |p: [f64; 3], w: f64| {
        for i in 0..3 {
            acc[i] += w * p[i];
        }
        total += w;
    };
    if let Some(n) = joints[1] {
        add(n, 0.4);
    }
    for (sh, hip) in [(2, 8), (5, 11)] {
        match (joints[sh], joints[hip]) {
            (Some(a), Some(b)) => {
                add(a, 0.1);
                add(b, 0.2);
            }
            (Some(a), None) | (None, Some(a)) => add(a, 0.3),
            (None, None) => {}
        }
    }
    (total > 0.0).then(|| [acc[0] / total, acc[1] / total, acc[2] / total])
}
