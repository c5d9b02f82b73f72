//! Monotone transformations `g` linking the latent count proxy to the latent
//! Gaussian scale, and their estimation from a count sample.
//!
//! CDF-based transformations place one knot per count value `j` at the upper
//! cell edge `a_{j+1}` with value `mu_z + sigma_z * Phi^{-1}(F(j))`, then
//! interpolate with a monotone cubic spline. The knots therefore reproduce
//! `F` exactly at the cell edges while the spline keeps every count value in
//! the support. Outside `[a_1, a_{y_max+1})` the transformation is `-inf` or
//! `+inf`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::rounding::RoundingScheme;
use crate::special::norm_quantile;
use crate::spline::MonotoneSpline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum TransformKind {
    Nonparametric,
    BoxCox { lambda: f64, estimated: bool },
    Log,
    Sqrt,
    Identity,
    PoissonCdf,
    NegbinCdf,
    /// Smoothed user-supplied CDF (e.g. a known data-generating marginal).
    Cdf,
}

impl TransformKind {
    pub fn label(&self) -> String {
        match self {
            TransformKind::Nonparametric => "np".into(),
            TransformKind::BoxCox { lambda, .. } => format!("box-cox({lambda})"),
            TransformKind::Log => "log".into(),
            TransformKind::Sqrt => "sqrt".into(),
            TransformKind::Identity => "identity".into(),
            TransformKind::PoissonCdf => "poisson".into(),
            TransformKind::NegbinCdf => "negbin".into(),
            TransformKind::Cdf => "cdf".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Shape {
    BoxCox { lambda: f64 },
    Spline(MonotoneSpline),
}

/// A monotone map `g` with its inverse, location-scale anchors and support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transformation {
    kind: TransformKind,
    mu_z: f64,
    sigma_z: f64,
    shape: Shape,
    support_lower: f64,
    /// `None` encodes an unbounded support.
    support_upper: Option<f64>,
}

impl Transformation {
    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn anchors(&self) -> (f64, f64) {
        (self.mu_z, self.sigma_z)
    }

    pub fn lambda(&self) -> Option<f64> {
        match self.shape {
            Shape::BoxCox { lambda } => Some(lambda),
            Shape::Spline(_) => None,
        }
    }

    pub fn spline(&self) -> Option<&MonotoneSpline> {
        match &self.shape {
            Shape::Spline(s) => Some(s),
            Shape::BoxCox { .. } => None,
        }
    }

    /// Number of transformation parameters counted by AIC/BIC.
    pub fn n_params(&self) -> usize {
        match self.kind {
            TransformKind::Nonparametric => self.spline().map_or(0, |s| s.len()),
            TransformKind::BoxCox { estimated, .. } => usize::from(estimated),
            TransformKind::PoissonCdf => 1,
            TransformKind::NegbinCdf => 2,
            TransformKind::Log
            | TransformKind::Sqrt
            | TransformKind::Identity
            | TransformKind::Cdf => 0,
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.support_lower, self.support_upper.unwrap_or(f64::INFINITY))
    }

    /// Whether the support matches the scheme's `[a_1, a_{y_max+1})`.
    pub fn matches_scheme(&self, scheme: &RoundingScheme) -> bool {
        let (lo, hi) = self.support();
        lo == scheme.support_lower() && hi == scheme.support_upper()
    }

    /// The formula part of `g`, ignoring the support limits.
    fn raw(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::BoxCox { lambda } => self.mu_z + self.sigma_z * box_cox(t, *lambda),
            Shape::Spline(s) => s.evaluate(t),
        }
    }

    fn raw_inverse(&self, z: f64) -> f64 {
        match &self.shape {
            Shape::BoxCox { lambda } => {
                let u = (z - self.mu_z) / self.sigma_z;
                if *lambda == 0.0 {
                    u.exp()
                } else {
                    let base = 1.0 + lambda * u;
                    if base <= 0.0 {
                        0.0
                    } else {
                        base.powf(1.0 / lambda)
                    }
                }
            }
            Shape::Spline(s) => s.inverse(z),
        }
    }

    /// `g(t)`: `-inf` below the support, `+inf` at or above its upper edge.
    pub fn evaluate(&self, t: f64) -> f64 {
        if t < self.support_lower {
            f64::NEG_INFINITY
        } else if t >= self.support_upper.unwrap_or(f64::INFINITY) {
            f64::INFINITY
        } else {
            self.raw(t)
        }
    }

    /// `g^{-1}(z)`, with limits `0` at `-inf` and the support's upper edge
    /// at `+inf`.
    pub fn inverse(&self, z: f64) -> f64 {
        let upper = self.support_upper.unwrap_or(f64::INFINITY);
        if z == f64::NEG_INFINITY {
            return 0.0;
        }
        if z == f64::INFINITY {
            return upper;
        }
        let t = self.raw_inverse(z);
        if t.is_nan() {
            0.0
        } else {
            t.min(upper)
        }
    }

    /// Transformed cell edges `(g(a_j), g(a_{j+1}))`.
    pub fn cell(&self, scheme: &RoundingScheme, j: u32) -> (f64, f64) {
        (
            self.evaluate(scheme.breakpoint(j)),
            self.evaluate(scheme.breakpoint(j + 1)),
        )
    }

    /// Re-check invariants and rebuild derived state after deserialization.
    pub(crate) fn restore(self) -> Result<Self> {
        check_anchors((self.mu_z, self.sigma_z))?;
        let shape = match self.shape {
            Shape::Spline(s) => Shape::Spline(s.restore()?),
            Shape::BoxCox { lambda } if !(lambda >= 0.0) || !lambda.is_finite() => {
                return Err(StarError::Domain(format!("Box-Cox lambda must be >= 0, got {lambda}")))
            }
            other => other,
        };
        Ok(Self { shape, ..self })
    }
}

fn box_cox(t: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        t.ln()
    } else {
        (t.powf(lambda) - 1.0) / lambda
    }
}

/// Box-Cox transformation `(t^lambda - 1)/lambda` (`log t` at zero), composed
/// with the anchors as `mu_z + sigma_z * g(t)`.
pub fn box_cox_transform(
    lambda: f64,
    anchors: (f64, f64),
    scheme: &RoundingScheme,
) -> Result<Transformation> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(StarError::Domain(format!(
            "Box-Cox lambda must be >= 0, got {lambda}"
        )));
    }
    check_anchors(anchors)?;
    let kind = if lambda == 0.0 {
        TransformKind::Log
    } else if lambda == 0.5 {
        TransformKind::Sqrt
    } else if lambda == 1.0 {
        TransformKind::Identity
    } else {
        TransformKind::BoxCox {
            lambda,
            estimated: false,
        }
    };
    Ok(Transformation {
        kind,
        mu_z: anchors.0,
        sigma_z: anchors.1,
        shape: Shape::BoxCox { lambda },
        support_lower: scheme.support_lower(),
        support_upper: finite(scheme.support_upper()),
    })
}

/// Mark a Box-Cox transformation as having an estimated exponent (one extra
/// parameter for information criteria).
pub fn mark_estimated(mut t: Transformation) -> Transformation {
    if let Shape::BoxCox { lambda } = t.shape {
        t.kind = TransformKind::BoxCox {
            lambda,
            estimated: true,
        };
    }
    t
}

fn check_anchors(anchors: (f64, f64)) -> Result<()> {
    if !anchors.0.is_finite() || !(anchors.1 > 0.0) || !anchors.1.is_finite() {
        return Err(StarError::Domain(format!(
            "anchors must be finite with positive scale, got {anchors:?}"
        )));
    }
    Ok(())
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// One entry of the empirical step transformation: the observed count `j`,
/// the rescaled ECDF `F~(j)`, and `g0(a_{j+1}) = mu_z + sigma_z Phi^{-1}(F~(j))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcdfEntry {
    pub j: u32,
    pub cdf: f64,
    pub g0: f64,
}

/// The step-function transformation built from the rescaled empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct EcdfTable {
    pub mu_z: f64,
    pub sigma_z: f64,
    /// One entry per distinct observed value, increasing in `j`.
    pub entries: Vec<EcdfEntry>,
    scheme: RoundingScheme,
}

impl EcdfTable {
    /// `F~(j)` for any integer `j` (zero below the smallest observation).
    pub fn cdf(&self, j: i64) -> f64 {
        if j < 0 {
            return 0.0;
        }
        let k = self.entries.partition_point(|e| (e.j as i64) <= j);
        if k == 0 {
            0.0
        } else {
            self.entries[k - 1].cdf
        }
    }

    /// The step transformation `g0(t) = mu_z + sigma_z Phi^{-1}(F~(h(t) - 1))`
    /// on the support, `-inf`/`+inf` outside it.
    pub fn g0(&self, t: f64) -> f64 {
        if t < self.scheme.support_lower() {
            return f64::NEG_INFINITY;
        }
        if t >= self.scheme.support_upper() {
            return f64::INFINITY;
        }
        let j = self.scheme.round_value(t) as i64 - 1;
        let f = self.cdf(j);
        if f <= 0.0 {
            f64::NEG_INFINITY
        } else {
            self.mu_z + self.sigma_z * norm_quantile(f).expect("0 < F~ < 1")
        }
    }

    /// Interpolation knots `(t, g0(t))` at each distinct observed value
    /// `t = a_y` where `g0` is finite, plus `a_{y_max}` for a bounded scheme
    /// whose bound was not observed. With only two distinct values this
    /// leaves a single finite knot; the upper cell edges `(a_{y+1}, g0)`
    /// are used instead so the spline is the line through them.
    pub fn knots(&self) -> (Vec<f64>, Vec<f64>) {
        let mut at: Vec<f64> = self.entries.iter().map(|e| self.scheme.breakpoint(e.j)).collect();
        if let Some(m) = self.scheme.y_max() {
            if self.entries.last().is_some_and(|e| e.j < m) {
                at.push(self.scheme.breakpoint(m));
            }
        }
        let knots: (Vec<f64>, Vec<f64>) = at
            .into_iter()
            .map(|t| (t, self.g0(t)))
            .filter(|(t, g)| t.is_finite() && g.is_finite())
            .unzip();
        if knots.0.len() >= 2 {
            return knots;
        }
        self.entries
            .iter()
            .map(|e| (self.scheme.knot_location(e.j), e.g0))
            .unzip()
    }
}

/// Location, scale and normalized weights shared by every moment-based
/// estimator. Equal weights take the unweighted path so results match it
/// exactly.
struct SampleSummary {
    mean: f64,
    sd: f64,
    /// Weights normalized to sum to `n`; `None` for the unweighted case.
    weights: Option<Vec<f64>>,
}

fn summarize(y: &[u32], weights: Option<&[f64]>) -> Result<SampleSummary> {
    let n = y.len();
    if n == 0 {
        return Err(StarError::EmptySample);
    }
    let weights = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(StarError::Dimension(format!(
                    "{} weights for {} observations",
                    w.len(),
                    n
                )));
            }
            if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(StarError::Domain("weights must be positive and finite".into()));
            }
            if w.iter().all(|&v| v == w[0]) {
                None
            } else {
                let total: f64 = w.iter().sum();
                Some(w.iter().map(|&v| v * n as f64 / total).collect::<Vec<_>>())
            }
        }
        None => None,
    };
    if n < 2 {
        return Err(StarError::DegenerateResponse);
    }
    let nf = n as f64;
    let (mean, ss) = match &weights {
        None => {
            let mean = y.iter().map(|&v| v as f64).sum::<f64>() / nf;
            let ss: f64 = y.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
            (mean, ss)
        }
        Some(w) => {
            let mean = y.iter().zip(w).map(|(&v, &wi)| wi * v as f64).sum::<f64>() / nf;
            let ss: f64 = y
                .iter()
                .zip(w)
                .map(|(&v, &wi)| wi * (v as f64 - mean).powi(2))
                .sum();
            (mean, ss)
        }
    };
    let sd = (ss / (nf - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(StarError::DegenerateResponse);
    }
    Ok(SampleSummary { mean, sd, weights })
}

/// The rescaled-ECDF step transformation `g0`, optionally survey weighted.
pub fn ecdf_transform_base(
    y: &[u32],
    scheme: &RoundingScheme,
    weights: Option<&[f64]>,
) -> Result<EcdfTable> {
    for (i, &v) in y.iter().enumerate() {
        scheme.check_response(i, v as i64)?;
    }
    let summary = summarize(y, weights)?;
    let n = y.len() as f64;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by_key(|&i| y[i]);
    let mut entries: Vec<EcdfEntry> = Vec::new();
    let mut cum = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let j = y[order[idx]];
        while idx < order.len() && y[order[idx]] == j {
            cum += summary.weights.as_ref().map_or(1.0, |w| w[order[idx]]);
            idx += 1;
        }
        let ecdf = if idx == order.len() { 1.0 } else { cum / n };
        let cdf = n / (n + 1.0) * ecdf;
        let g0 = summary.mean + summary.sd * norm_quantile(cdf)?;
        entries.push(EcdfEntry { j, cdf, g0 });
    }
    Ok(EcdfTable {
        mu_z: summary.mean,
        sigma_z: summary.sd,
        entries,
        scheme: scheme.clone(),
    })
}

/// Smooth monotone interpolation of the rescaled-ECDF transformation.
pub fn fit_nonparametric_transform(
    y: &[u32],
    scheme: &RoundingScheme,
    weights: Option<&[f64]>,
) -> Result<Transformation> {
    let table = ecdf_transform_base(y, scheme, weights)?;
    if table.entries.len() < 2 {
        return Err(StarError::DegenerateResponse);
    }
    let (xs, ys) = table.knots();
    let spline = MonotoneSpline::fit(xs, ys)?;
    Ok(Transformation {
        kind: TransformKind::Nonparametric,
        mu_z: table.mu_z,
        sigma_z: table.sigma_z,
        shape: Shape::Spline(spline),
        support_lower: scheme.support_lower(),
        support_upper: finite(scheme.support_upper()),
    })
}

/// Transformation from a known CDF given at `j = 0, 1, ..., cdf.len() - 1`.
/// Values equal to 0 or 1 yield infinite knots and are skipped.
pub fn transform_from_cdf(
    kind: TransformKind,
    cdf: &[f64],
    anchors: (f64, f64),
    scheme: &RoundingScheme,
) -> Result<Transformation> {
    check_anchors(anchors)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (j, &f) in cdf.iter().enumerate() {
        let j = j as u32;
        if scheme.y_max().is_some_and(|m| j > m) {
            break;
        }
        if f > 0.0 && f < 1.0 {
            let z = anchors.0 + anchors.1 * norm_quantile(f)?;
            if ys.last().is_some_and(|&prev| z <= prev) {
                continue;
            }
            xs.push(scheme.knot_location(j));
            ys.push(z);
        }
    }
    if xs.len() < 2 {
        return Err(StarError::InvalidKnots(
            "CDF has fewer than two values strictly inside (0, 1)".into(),
        ));
    }
    let spline = MonotoneSpline::fit(xs, ys)?;
    Ok(Transformation {
        kind,
        mu_z: anchors.0,
        sigma_z: anchors.1,
        shape: Shape::Spline(spline),
        support_lower: scheme.support_lower(),
        support_upper: finite(scheme.support_upper()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountFamily {
    Poisson,
    Negbin,
}

/// Method-of-moments NegBin size `r = mean^2 / (var - mean)`.
pub fn negbin_size_from_moments(mean: f64, variance: f64) -> Result<f64> {
    if !(variance > mean) {
        return Err(StarError::Underdispersed { mean, variance });
    }
    Ok(mean * mean / (variance - mean))
}

/// Cumulative probabilities `P(Y <= j)` for `j = 0..=last` of a Poisson or
/// NegBin distribution with the given mean (and size `r` for NegBin).
pub fn count_cdf(family: CountFamily, mean: f64, size: f64, last: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(last as usize + 1);
    let (mut pmf, ratio): (f64, Box<dyn Fn(u32) -> f64>) = match family {
        CountFamily::Poisson => ((-mean).exp(), Box::new(move |k| mean / (k as f64 + 1.0))),
        CountFamily::Negbin => {
            let q = mean / (size + mean);
            (
                (size * (size / (size + mean)).ln()).exp(),
                Box::new(move |k| (k as f64 + size) / (k as f64 + 1.0) * q),
            )
        }
    };
    let mut cum = 0.0;
    for k in 0..=last {
        cum += pmf;
        out.push(cum.min(1.0));
        pmf *= ratio(k);
    }
    out
}

/// Transformation from a Poisson or moment-matched NegBin marginal CDF with
/// anchors `(mean, sd)` of the sample.
pub fn parametric_cdf_transform(
    family: CountFamily,
    y: &[u32],
    scheme: &RoundingScheme,
) -> Result<Transformation> {
    for (i, &v) in y.iter().enumerate() {
        scheme.check_response(i, v as i64)?;
    }
    let summary = summarize(y, None)?;
    let (mean, var) = (summary.mean, summary.sd * summary.sd);
    let size = match family {
        CountFamily::Poisson => f64::INFINITY,
        CountFamily::Negbin => negbin_size_from_moments(mean, var)?,
    };
    let max_obs = *y.iter().max().expect("non-empty");
    let last = match scheme.y_max() {
        Some(m) => m,
        None => {
            // extend until the upper tail is negligible
            let mut last = max_obs.max(1);
            loop {
                let cdf = count_cdf(family, mean, size, last);
                if *cdf.last().unwrap() >= 1.0 - 1e-12 || last > 100_000 {
                    break last;
                }
                last *= 2;
            }
        }
    };
    let cdf = count_cdf(family, mean, size, last);
    let kind = match family {
        CountFamily::Poisson => TransformKind::PoissonCdf,
        CountFamily::Negbin => TransformKind::NegbinCdf,
    };
    transform_from_cdf(kind, &cdf, (summary.mean, summary.sd), scheme)
}
