//! Scalar normal-distribution kernels used by the likelihood, the E-step and
//! the inference routines.
//!
//! Tail quantities are evaluated through the Mills ratio `R(x) = Q(x)/phi(x)`
//! so that probabilities of intervals lying deep in one tail keep full
//! relative precision instead of cancelling to zero.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::OnceLock;

use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Result, StarError};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Smallest probability reported by [`norm_cdf_diff`].
pub const PROB_FLOOR: f64 = 1e-300;

/// A possibly unbounded interval on the extended real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(StarError::DegenerateInterval { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn whole_line() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    /// Standardize `(lower - mu) / sigma`, `(upper - mu) / sigma`.
    pub fn standardize(&self, mu: f64, sigma: f64) -> Interval {
        Interval {
            lower: (self.lower - mu) / sigma,
            upper: (self.upper - mu) / sigma,
        }
    }

    pub fn shift(&self, delta: f64) -> Interval {
        Interval {
            lower: self.lower + delta,
            upper: self.upper + delta,
        }
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x == f64::INFINITY {
        1.0
    } else {
        0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Upper tail `1 - Phi(x)`.
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// Mills ratio `(1 - Phi(x)) / phi(x)` for `x >= 0` (also valid, if less
/// useful, for moderately negative `x`).
pub fn mills_ratio(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x < 25.0 {
        return norm_sf(x) / norm_pdf(x);
    }
    // Backward evaluation of 1/(x + 1/(x + 2/(x + 3/(x + ...)))).
    let mut tail = x;
    for k in (1..=40).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}

/// Interval probability of a standard normal in its reduced form.
///
/// Returns `(log_scale, reduced)` with `P = exp(log_scale) * reduced`. For an
/// upper-tail interval `[a, b]`, `a >= 0`, the scale is `phi(a)` and
/// `reduced = R(a) - exp(-(b - a)(b + a)/2) R(b)`.
fn reduced_mass(lower: f64, upper: f64) -> (f64, f64) {
    if lower >= 0.0 {
        let decay = decay_ratio(lower, upper);
        let reduced = mills_ratio(lower) - decay * mills_ratio(upper);
        (norm_log_pdf(lower), reduced)
    } else if upper <= 0.0 {
        reduced_mass(-upper, -lower)
    } else {
        let lo = if lower == f64::NEG_INFINITY {
            -1.0
        } else {
            libm::erf(lower * FRAC_1_SQRT_2)
        };
        let hi = if upper == f64::INFINITY {
            1.0
        } else {
            libm::erf(upper * FRAC_1_SQRT_2)
        };
        (0.0, 0.5 * (hi - lo))
    }
}

/// `phi(b) / phi(a)` for `0 <= a < b`, zero when `b` is infinite.
fn decay_ratio(a: f64, b: f64) -> f64 {
    if b == f64::INFINITY {
        0.0
    } else {
        (-0.5 * (b - a) * (b + a)).exp()
    }
}

/// `Phi(upper) - Phi(lower)` without cancellation in the tails.
///
/// Values below [`PROB_FLOOR`] are clamped; the returned flag reports whether
/// the clamp was applied.
pub fn norm_cdf_diff_flagged(interval: Interval) -> Result<(f64, bool)> {
    let Interval { lower, upper } = interval;
    if lower.is_nan() || upper.is_nan() || lower >= upper {
        return Err(StarError::DegenerateInterval { lower, upper });
    }
    let (log_scale, reduced) = reduced_mass(lower, upper);
    let value = log_scale.exp() * reduced;
    if !(value >= PROB_FLOOR) {
        Ok((PROB_FLOOR, true))
    } else {
        Ok((value.min(1.0), false))
    }
}

pub fn norm_cdf_diff(interval: Interval) -> Result<f64> {
    norm_cdf_diff_flagged(interval).map(|(v, _)| v)
}

/// `log(Phi(upper) - Phi(lower))`, finite for every nondegenerate interval
/// whose reduced mass is representable.
pub fn log_norm_cdf_diff(lower: f64, upper: f64) -> f64 {
    if !(lower < upper) {
        return f64::NEG_INFINITY;
    }
    let (log_scale, reduced) = reduced_mass(lower, upper);
    if reduced > 0.0 {
        log_scale + reduced.ln()
    } else {
        // Interval too narrow for the reduced form: midpoint rule.
        let mid = if lower.is_finite() && upper.is_finite() {
            0.5 * (lower + upper)
        } else {
            return f64::NEG_INFINITY;
        };
        norm_log_pdf(mid) + (upper - lower).ln()
    }
}

/// Inverse of the standard normal CDF (Wichura's AS241 followed by one
/// Newton correction).
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StarError::Domain(format!(
            "normal quantile requires 0 < p < 1, got {p}"
        )));
    }
    let x = as241(p);
    // Newton correction on whichever tail is represented more accurately.
    let dens = norm_pdf(x);
    if dens > 0.0 && x.is_finite() {
        let step = if p < 0.5 {
            (norm_cdf(x) - p) / dens
        } else {
            ((1.0 - p) - norm_sf(x)) / dens
        };
        if step.is_finite() {
            return Ok(x - step);
        }
    }
    Ok(x)
}

/// Quantile of the upper tail: returns `x` with `1 - Phi(x) = q`.
pub fn norm_quantile_upper(q: f64) -> Result<f64> {
    norm_quantile(q).map(|x| -x)
}

#[allow(clippy::excessive_precision)]
fn as241(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_128) * r
            + 67265.770_927_008_7)
            * r
            + 45921.953_931_549_871)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_6;
        let den = ((((((r * 5226.495_278_852_546 + 28729.085_735_721_943) * r
            + 39307.895_800_092_71)
            * r
            + 21213.794_301_586_596)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_6)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_6;
        let den = ((((((r * 1.050_750_071_644_416_8e-9 + 5.475_938_084_995_345e-4) * r
            + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_07)
            * r
            + 0.689_767_334_985_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103_8;
        let den = ((((((r * 2.044_263_103_389_939_8e-15 + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_8)
            * r
            + 0.599_832_206_555_887_9)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Moments of a normal variable truncated to an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    /// `E[Z | Z in interval]`
    pub m1: f64,
    /// `E[Z^2 | Z in interval]`
    pub m2: f64,
}

impl TruncatedMoments {
    pub fn variance(&self) -> f64 {
        self.m2 - self.m1 * self.m1
    }
}

/// Mean and variance of a standard normal truncated to `[a, b]`, or `None`
/// when the interval carries no representable mass.
pub fn standard_truncated(a: f64, b: f64) -> Option<(f64, f64)> {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return Some((0.0, 1.0));
    }
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    if half * (mid.abs() + half) <= 1.0 {
        return narrow_truncated(mid, half);
    }
    if a >= 0.0 {
        let decay = decay_ratio(a, b);
        let reduced = mills_ratio(a) - decay * mills_ratio(b);
        if !(reduced > 0.0) || !reduced.is_finite() {
            return None;
        }
        let mean = (1.0 - decay) / reduced;
        let b_term = if b == f64::INFINITY { 0.0 } else { b * decay };
        let second = 1.0 + (a - b_term) / reduced;
        let mut var = second - mean * mean;
        if !(var > 0.0) {
            var = fallback_variance(a, b);
        }
        if !(mean.is_finite() && var.is_finite()) {
            return None;
        }
        return Some((mean, var));
    }
    if b <= 0.0 {
        return standard_truncated(-b, -a).map(|(m, v)| (-m, v));
    }
    // Straddles zero: direct evaluation is well conditioned.
    let (_, mass) = reduced_mass(a, b);
    if !(mass > 0.0) {
        return None;
    }
    let (pa, apa) = if a == f64::NEG_INFINITY {
        (0.0, 0.0)
    } else {
        let d = norm_pdf(a);
        (d, a * d)
    };
    let (pb, bpb) = if b == f64::INFINITY {
        (0.0, 0.0)
    } else {
        let d = norm_pdf(b);
        (d, b * d)
    };
    let mean = (pa - pb) / mass;
    let var = 1.0 + (apa - bpb) / mass - mean * mean;
    let var = if var > 0.0 { var } else { fallback_variance(a, b) };
    Some((mean, var))
}

/// Moments on a short interval `[mid - half, mid + half]`, where the closed
/// forms cancel. Relative to the midpoint the density is
/// `exp(-mid t - t^2 / 2)`, whose log varies by at most 2 over the interval,
/// so Gauss-Legendre quadrature is exact to rounding.
fn narrow_truncated(mid: f64, half: f64) -> Option<(f64, f64)> {
    if !(half > 0.0) {
        return None;
    }
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &(node, weight) in gauss_legendre() {
        let t = half * node;
        let e = weight * (-mid * t - 0.5 * t * t).exp();
        z += e;
        s1 += e * t;
        s2 += e * t * t;
    }
    let shift = s1 / z;
    let var = s2 / z - shift * shift;
    (var > 0.0).then_some((mid + shift, var))
}

const GL_POINTS: usize = 20;

/// Nodes and weights of the 20-point Gauss-Legendre rule on `[-1, 1]`.
fn gauss_legendre() -> &'static [(f64, f64); GL_POINTS] {
    static RULE: OnceLock<[(f64, f64); GL_POINTS]> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut rule = [(0.0, 0.0); GL_POINTS];
        for i in 0..n {
            // Newton iteration on P_n from the Chebyshev-like initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut deriv = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                deriv = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / deriv;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            rule[i] = (x, 2.0 / ((1.0 - x * x) * deriv * deriv));
        }
        rule
    })
}

/// Leading-order variance when the exact expression has lost all digits.
fn fallback_variance(a: f64, b: f64) -> f64 {
    if a.is_finite() && b.is_finite() {
        (b - a) * (b - a) / 12.0
    } else {
        let edge = if a.is_finite() { a } else { b };
        (1.0 / (edge * edge)).max(f64::MIN_POSITIVE)
    }
}

/// First and second raw moments of `N(mu, sigma^2)` truncated to `interval`.
pub fn truncnorm_moments(mu: f64, sigma: f64, interval: Interval) -> Result<TruncatedMoments> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(StarError::Domain(format!(
            "truncated-normal scale must be positive and finite, got {sigma}"
        )));
    }
    let std = interval.standardize(mu, sigma);
    if !(std.lower < std.upper) {
        return Err(StarError::DegenerateTruncation { row: None });
    }
    let (mean, var) =
        standard_truncated(std.lower, std.upper).ok_or(StarError::DegenerateTruncation { row: None })?;
    let m1 = mu + sigma * mean;
    let m2 = m1 * m1 + sigma * sigma * var;
    Ok(TruncatedMoments { m1, m2 })
}

/// Upper-tail probability of a chi-square variable.
pub fn chisq_sf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

pub fn chisq_cdf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    gamma_lr(df as f64 / 2.0, x / 2.0)
}

/// Quantile of the chi-square distribution by bisection on the regularized
/// lower incomplete gamma function.
pub fn chisq_quantile(p: f64, df: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StarError::Domain(format!(
            "chi-square quantile requires 0 < p < 1, got {p}"
        )));
    }
    if df == 0 {
        return Err(StarError::Domain("chi-square df must be >= 1".into()));
    }
    let k = df as f64;
    let mut hi = k + 10.0 * (2.0 * k).sqrt() + 50.0;
    while chisq_cdf(hi, df) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chisq_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `1 / sqrt(2 pi)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        // composite Simpson
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn pdf_values() {
        assert!((norm_pdf(0.0) - 0.398_942_280_4).abs() < 1e-10);
        assert!((norm_pdf(1.0) - 0.241_970_724_5).abs() < 1e-10);
        assert_eq!(norm_pdf(-1.0), norm_pdf(1.0));
        assert!((norm_pdf(0.0) - INV_SQRT_2PI).abs() < 1e-16);
    }

    #[test]
    fn cdf_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert_eq!(norm_cdf(f64::INFINITY), 1.0);
        assert_eq!(norm_cdf(f64::NEG_INFINITY), 0.0);
        let oracle = 0.5 + quad(norm_pdf, 0.0, 1.96, 2000);
        assert!((norm_cdf(1.96) - oracle).abs() < 1e-13);
        assert!((norm_cdf(1.96) - 0.975_002_104_9).abs() < 1e-10);
    }

    #[test]
    fn cdf_diff_examples() {
        let half = norm_cdf_diff(Interval::new(f64::NEG_INFINITY, 0.0).unwrap()).unwrap();
        assert!((half - 0.5).abs() < 1e-16);
        // naive subtraction loses everything here
        let naive = norm_cdf(9.0) - norm_cdf(8.0);
        let tail = norm_cdf_diff(Interval::new(8.0, 9.0).unwrap()).unwrap();
        assert!(naive.abs() < 1e-15 || (naive - tail).abs() / tail > 1e-3);
        // 1 - Phi(8) - (1 - Phi(9)) from a high-precision erfc evaluation
        assert!((tail - 6.219_831_985_865_830e-16).abs() / tail < 1e-12);
        let mid = norm_cdf_diff(Interval::new(-1.96, 1.96).unwrap()).unwrap();
        assert!((mid - 0.950_004_209_7).abs() < 1e-10);
        assert!(norm_cdf_diff(Interval {
            lower: 1.0,
            upper: 1.0
        })
        .is_err());
    }

    #[test]
    fn cdf_diff_clamps_far_tail() {
        let (v, clamped) = norm_cdf_diff_flagged(Interval::new(40.0, 41.0).unwrap()).unwrap();
        assert_eq!(v, PROB_FLOOR);
        assert!(clamped);
        let lp = log_norm_cdf_diff(40.0, 41.0);
        assert!(lp.is_finite() && lp < -800.0);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(norm_quantile(0.5).unwrap(), 0.0);
        assert!((norm_quantile(0.975).unwrap() - 1.959_963_984_5).abs() < 1e-10);
        assert!((norm_quantile(0.2).unwrap() + 0.841_621_233_6).abs() < 1e-10);
        assert!(norm_quantile(0.0).is_err());
        assert!(norm_quantile(1.0).is_err());
        for &p in &[1e-300, 1e-20, 1e-5, 0.1, 0.3, 0.7, 0.9, 1.0 - 1e-10] {
            let x = norm_quantile(p).unwrap();
            assert!((norm_cdf(x) - p).abs() <= 1e-12 * p.max(1e-300) + 1e-16);
        }
    }

    #[test]
    fn truncnorm_examples() {
        let m = truncnorm_moments(0.0, 1.0, Interval::whole_line()).unwrap();
        assert_eq!((m.m1, m.m2), (0.0, 1.0));
        let m = truncnorm_moments(0.0, 1.0, Interval::new(0.0, f64::INFINITY).unwrap()).unwrap();
        assert!((m.m1 - 0.797_884_560_8).abs() < 1e-10);
        assert!((m.m2 - 1.0).abs() < 1e-12);
        let m = truncnorm_moments(2.0, 0.5, Interval::new(1.5, 2.5).unwrap()).unwrap();
        assert!((m.m1 - 2.0).abs() < 1e-14);
        let norm = quad(norm_pdf, -1.0, 1.0, 4000);
        let ez2 = quad(|z| z * z * norm_pdf(z), -1.0, 1.0, 4000) / norm;
        let oracle = 4.0 + 0.25 * ez2;
        assert!((m.m2 - oracle).abs() < 1e-10);
    }

    #[test]
    fn truncnorm_far_tail_is_finite() {
        let m = truncnorm_moments(0.0, 1.0, Interval::new(60.0, f64::INFINITY).unwrap()).unwrap();
        assert!(m.m1 > 60.0 && m.m1 < 60.1);
        assert!(m.variance() > 0.0);
        let m = truncnorm_moments(0.0, 1.0, Interval::new(f64::NEG_INFINITY, -300.0).unwrap())
            .unwrap();
        assert!(m.m1 < -300.0);
        let m = truncnorm_moments(0.0, 1.0, Interval::new(30.0, 30.5).unwrap()).unwrap();
        assert!(m.m1 > 30.0 && m.m1 < 30.5 && m.variance() > 0.0);
    }

    #[test]
    fn chisq_quantile_examples() {
        assert!((chisq_quantile(0.90, 1).unwrap() - 2.705_543_454_1).abs() < 1e-9);
        assert!((chisq_quantile(0.95, 2).unwrap() + 2.0 * 0.05f64.ln()).abs() < 1e-9);
        assert!(chisq_quantile(1e-12, 3).unwrap() < 1e-6);
        assert!(chisq_quantile(0.0, 1).is_err());
        assert!(chisq_quantile(0.5, 0).is_err());
        let x = chisq_quantile(0.37, 7).unwrap();
        assert!((chisq_cdf(x, 7) - 0.37).abs() < 1e-10);
    }
}
