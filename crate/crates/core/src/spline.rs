//! Fritsch–Carlson monotone piecewise-cubic Hermite interpolation with linear
//! extrapolation beyond the end knots.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneSpline {
    knot_x: Vec<f64>,
    knot_y: Vec<f64>,
    #[serde(skip)]
    tangents: Vec<f64>,
}

impl MonotoneSpline {
    /// Fit through `(knot_x, knot_y)`. Knots must be strictly increasing in
    /// `x` and nondecreasing in `y`.
    pub fn fit(knot_x: Vec<f64>, knot_y: Vec<f64>) -> Result<Self> {
        if knot_x.len() != knot_y.len() {
            return Err(StarError::InvalidKnots(format!(
                "{} x values but {} y values",
                knot_x.len(),
                knot_y.len()
            )));
        }
        if knot_x.len() < 2 {
            return Err(StarError::InvalidKnots("need at least two knots".into()));
        }
        if knot_x.iter().chain(&knot_y).any(|v| !v.is_finite()) {
            return Err(StarError::InvalidKnots("knots must be finite".into()));
        }
        if knot_x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StarError::InvalidKnots(
                "x values must be strictly increasing".into(),
            ));
        }
        if knot_y.windows(2).any(|w| w[0] > w[1]) {
            return Err(StarError::InvalidKnots("y values must be nondecreasing".into()));
        }
        let tangents = fritsch_carlson_tangents(&knot_x, &knot_y);
        Ok(Self {
            knot_x,
            knot_y,
            tangents,
        })
    }

    /// Rebuild tangents after deserialization.
    pub(crate) fn restore(self) -> Result<Self> {
        Self::fit(self.knot_x, self.knot_y)
    }

    pub fn knot_x(&self) -> &[f64] {
        &self.knot_x
    }

    pub fn knot_y(&self) -> &[f64] {
        &self.knot_y
    }

    pub fn tangents(&self) -> &[f64] {
        &self.tangents
    }

    pub fn len(&self) -> usize {
        self.knot_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knot_x.is_empty()
    }

    /// Index `k` of the segment `[x_k, x_{k+1})` containing `x`, for `x`
    /// inside the knot range.
    fn segment(&self, x: f64) -> usize {
        let k = self.knot_x.partition_point(|&v| v <= x);
        k.saturating_sub(1).min(self.knot_x.len() - 2)
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let n = self.knot_x.len();
        if x <= self.knot_x[0] {
            return self.knot_y[0] + self.tangents[0] * (x - self.knot_x[0]);
        }
        if x >= self.knot_x[n - 1] {
            return self.knot_y[n - 1] + self.tangents[n - 1] * (x - self.knot_x[n - 1]);
        }
        let k = self.segment(x);
        self.hermite(k, (x - self.knot_x[k]) / (self.knot_x[k + 1] - self.knot_x[k]))
    }

    fn hermite(&self, k: usize, s: f64) -> f64 {
        let h = self.knot_x[k + 1] - self.knot_x[k];
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.knot_y[k]
            + h10 * h * self.tangents[k]
            + h01 * self.knot_y[k + 1]
            + h11 * h * self.tangents[k + 1]
    }

    fn hermite_slope(&self, k: usize, s: f64) -> f64 {
        let h = self.knot_x[k + 1] - self.knot_x[k];
        let s2 = s * s;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        (d00 * self.knot_y[k] + d01 * self.knot_y[k + 1]) / h
            + d10 * self.tangents[k]
            + d11 * self.tangents[k + 1]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.knot_x.len();
        if x <= self.knot_x[0] {
            return self.tangents[0];
        }
        if x >= self.knot_x[n - 1] {
            return self.tangents[n - 1];
        }
        let k = self.segment(x);
        self.hermite_slope(k, (x - self.knot_x[k]) / (self.knot_x[k + 1] - self.knot_x[k]))
    }

    /// Smallest `x` with `evaluate(x) = y`. Returns `-inf`/`+inf` when `y`
    /// lies beyond a flat extrapolation.
    pub fn inverse(&self, y: f64) -> f64 {
        let n = self.knot_x.len();
        if y < self.knot_y[0] {
            return if self.tangents[0] > 0.0 {
                self.knot_x[0] + (y - self.knot_y[0]) / self.tangents[0]
            } else {
                f64::NEG_INFINITY
            };
        }
        if y > self.knot_y[n - 1] {
            return if self.tangents[n - 1] > 0.0 {
                self.knot_x[n - 1] + (y - self.knot_y[n - 1]) / self.tangents[n - 1]
            } else {
                f64::INFINITY
            };
        }
        // First segment whose right endpoint reaches y.
        let k = self.knot_y[1..].partition_point(|&v| v < y).min(n - 2);
        let (y0, y1) = (self.knot_y[k], self.knot_y[k + 1]);
        let h = self.knot_x[k + 1] - self.knot_x[k];
        if y <= y0 {
            return self.knot_x[k];
        }
        if y >= y1 {
            return self.knot_x[k + 1];
        }
        // Safeguarded Newton on s in [0, 1].
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut s = (y - y0) / (y1 - y0);
        for _ in 0..100 {
            let f = self.hermite(k, s) - y;
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            if f == 0.0 || hi - lo < 1e-16 {
                break;
            }
            let slope = self.hermite_slope(k, s) * h;
            let next = if slope > 0.0 { s - f / slope } else { f64::NAN };
            let next = if next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
            if (next - s).abs() < 1e-17 {
                s = next;
                break;
            }
            s = next;
        }
        self.knot_x[k] + s * h
    }
}

/// Tangents of the monotone Hermite interpolant: three-point averages of the
/// secants, then the Fritsch–Carlson restriction applied left to right.
/// Strictly increasing data never reach the repair sweep at the end.
fn fritsch_carlson_tangents(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let secants: Vec<f64> = (0..n - 1)
        .map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k]))
        .collect();
    let mut m = Vec::with_capacity(n);
    m.push(secants[0]);
    for k in 1..n - 1 {
        m.push(0.5 * (secants[k - 1] + secants[k]));
    }
    m.push(secants[n - 2]);

    for k in 0..n - 1 {
        let sk = secants[k];
        if sk == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let alpha = m[k] / sk;
        let beta = m[k + 1] / sk;
        if outside_monotone_region(alpha, beta) {
            let tau = 3.0 * sk / (alpha * alpha + beta * beta).sqrt();
            m[k] = tau * alpha;
            m[k + 1] = tau * beta;
        }
    }
    // Zeroing or shrinking a tangent can push the previous segment out of
    // the monotone region; clamp such segments into the box
    // `0 <= alpha, beta <= 3`, which stays monotone under further shrinking.
    loop {
        let mut changed = false;
        for k in 0..n - 1 {
            let sk = secants[k];
            if sk == 0.0 || !outside_monotone_region(m[k] / sk, m[k + 1] / sk) {
                continue;
            }
            m[k] = m[k].min(3.0 * sk);
            m[k + 1] = m[k + 1].min(3.0 * sk);
            changed = true;
        }
        if !changed {
            break;
        }
    }
    m
}

fn outside_monotone_region(alpha: f64, beta: f64) -> bool {
    let a2b3 = 2.0 * alpha + beta - 3.0;
    let ab23 = alpha + 2.0 * beta - 3.0;
    a2b3 > 0.0 && ab23 > 0.0 && alpha * (a2b3 + ab23) < a2b3 * a2b3
}
